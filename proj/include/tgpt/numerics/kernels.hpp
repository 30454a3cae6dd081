#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tgpt/numerics/tensor.hpp"

// Forward kernels. Every kernel computes its output eagerly and, when an input
// takes part in differentiation, registers a backward closure on the result.

namespace tgpt {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using CMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MMap = Eigen::Map<RowMat<T>>;
template <class T>
using CStrided = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using MStrided = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

template <class T>
void require_finite(const Tensor<T>& x, const char* op) {
    for (T v : x.data()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + ": non-finite input");
        }
    }
}

inline Shape replace_last(Shape s, std::size_t last) {
    s.back() = last;
    return s;
}

inline std::size_t norm_axis(int axis, std::size_t rank) {
    const int r = static_cast<int>(rank);
    const int k = axis < 0 ? r + axis : axis;
    if (k < 0 || k >= r) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
    }
    return static_cast<std::size_t>(k);
}

// Splits a shape around `axis` into (outer, n, inner) extents.
struct AxisSplit {
    std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
    AxisSplit a;
    for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
    a.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
    return a;
}

inline bool is_suffix(const Shape& whole, const Shape& tail) {
    if (tail.size() > whole.size()) return false;
    return std::equal(tail.rbegin(), tail.rend(), whole.rbegin());
}

}  // namespace detail

/// x [..., K] times b [K, N].
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (b.rank() != 2 || a.dim(-1) != b.dim(0)) {
        throw ShapeError("matmul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " do not conform");
    }
    const std::size_t K = b.dim(0), N = b.dim(1), R = a.numel() / K;
    std::vector<T> out(R * N);
    detail::MMap<T>(out.data(), R, N).noalias() =
        detail::CMap<T>(a.data().data(), R, K) * detail::CMap<T>(b.data().data(), K, N);
    auto pa = a.node_ptr(), pb = b.node_ptr();
    return make_result<T>(detail::replace_last(a.shape(), N), std::move(out), "matmul", {pa, pb},
                          [pa, pb, R, K, N](const Node<T>& self) {
                              detail::CMap<T> dy(self.grad.data(), R, N);
                              if (pa->requires_grad) {
                                  pa->ensure_grad();
                                  detail::MMap<T>(pa->grad.data(), R, K).noalias() +=
                                      dy * detail::CMap<T>(pb->data.data(), K, N).transpose();
                              }
                              if (pb->requires_grad) {
                                  pb->ensure_grad();
                                  detail::MMap<T>(pb->grad.data(), K, N).noalias() +=
                                      detail::CMap<T>(pa->data.data(), R, K).transpose() * dy;
                              }
                          });
}

/// y = x W^T + b with W stored [out, in]; `bias` may be undefined.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {}) {
    if (weight.rank() != 2 || x.dim(-1) != weight.dim(1)) {
        throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(weight.shape()));
    }
    const std::size_t in = weight.dim(1), outd = weight.dim(0), R = x.numel() / in;
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outd)) {
        throw ShapeError("linear: bias " + shape_str(bias.shape()) + " vs weight " +
                         shape_str(weight.shape()));
    }
    std::vector<T> out(R * outd);
    detail::MMap<T> y(out.data(), R, outd);
    y.noalias() = detail::CMap<T>(x.data().data(), R, in) *
                  detail::CMap<T>(weight.data().data(), outd, in).transpose();
    if (bias.defined()) {
        y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), outd);
    }
    auto px = x.node_ptr(), pw = weight.node_ptr();
    auto pb = bias.defined() ? bias.node_ptr() : nullptr;
    return make_result<T>(
        detail::replace_last(x.shape(), outd), std::move(out), "linear", {px, pw, pb},
        [px, pw, pb, R, in, outd](const Node<T>& self) {
            detail::CMap<T> dy(self.grad.data(), R, outd);
            if (px->requires_grad) {
                px->ensure_grad();
                detail::MMap<T>(px->grad.data(), R, in).noalias() +=
                    dy * detail::CMap<T>(pw->data.data(), outd, in);
            }
            if (pw->requires_grad) {
                pw->ensure_grad();
                detail::MMap<T>(pw->grad.data(), outd, in).noalias() +=
                    dy.transpose() * detail::CMap<T>(px->data.data(), R, in);
            }
            if (pb && pb->requires_grad) {
                pb->ensure_grad();
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(pb->grad.data(), outd) +=
                    dy.colwise().sum();
            }
        });
}

namespace detail {

// Shared body of add/mul: `b` is broadcast over the leading dims of `a`.
template <class T, bool Multiply>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (!is_suffix(a.shape(), b.shape())) {
        throw ShapeError(std::string(op) + ": shape " + shape_str(b.shape()) +
                         " does not broadcast onto " + shape_str(a.shape()));
    }
    const std::size_t n = a.numel(), m = b.numel();
    std::vector<T> out(n);
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = Multiply ? ad[i] * bd[i % m] : ad[i] + bd[i % m];
    }
    auto pa = a.node_ptr(), pb = b.node_ptr();
    return make_result<T>(a.shape(), std::move(out), op, {pa, pb}, [pa, pb, n, m](const Node<T>& self) {
        const T* g = self.grad.data();
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                pa->grad[i] += Multiply ? g[i] * pb->data[i % m] : g[i];
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                pb->grad[i % m] += Multiply ? g[i] * pa->data[i] : g[i];
            }
        }
    });
}

}  // namespace detail

/// Elementwise sum; `b` may have a suffix shape of `a` and is broadcast.
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::broadcast_binary<T, false>(a, b, "add");
}

/// Elementwise product with the same broadcasting rule as add.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::broadcast_binary<T, true>(a, b, "mul");
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= factor;
    auto pa = a.node_ptr();
    return make_result<T>(a.shape(), std::move(out), "scale", {pa}, [pa, factor](const Node<T>& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += factor * self.grad[i];
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return add(a, scale(b, T(-1)));
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
    }
    auto pa = a.node_ptr();
    return make_result<T>(std::move(shape), a.values(), "reshape", {pa}, [pa](const Node<T>& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    });
}

/// Concatenation along `axis` (negative counts from the back).
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    const std::size_t ax = detail::norm_axis(axis, s0.size());
    Shape out_shape = s0;
    out_shape[ax] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == ax) || s[i] == s0[i];
        if (!ok) {
            throw ShapeError("concat: shapes " + shape_str(s0) + " and " + shape_str(s) +
                             " differ off the concat axis");
        }
        out_shape[ax] += s[ax];
    }
    const auto split = detail::split_at(out_shape, ax);
    std::vector<T> out(shape_numel(out_shape));
    std::vector<std::size_t> widths;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.shape()[ax] * split.inner;
        const std::size_t row = split.n * split.inner;
        for (std::size_t o = 0; o < split.outer; ++o) {
            std::copy_n(p.data().data() + o * w, w, out.data() + o * row + offset);
        }
        widths.push_back(w);
        parents.push_back(p.node_ptr());
        offset += w;
    }
    auto ps = parents;
    return make_result<T>(out_shape, std::move(out), "concat", std::move(parents),
                          [ps, widths, split](const Node<T>& self) {
                              const std::size_t row = split.n * split.inner;
                              std::size_t off = 0;
                              for (std::size_t k = 0; k < ps.size(); ++k) {
                                  const std::size_t w = widths[k];
                                  if (ps[k]->requires_grad) {
                                      ps[k]->ensure_grad();
                                      for (std::size_t o = 0; o < split.outer; ++o) {
                                          for (std::size_t j = 0; j < w; ++j) {
                                              ps[k]->grad[o * w + j] += self.grad[o * row + off + j];
                                          }
                                      }
                                  }
                                  off += w;
                              }
                          });
}

/// Contiguous range [start, start+len) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t start, std::size_t len) {
    const std::size_t ax = detail::norm_axis(axis, x.rank());
    if (len == 0 || start + len > x.shape()[ax]) {
        throw ShapeError("slice: range out of bounds for " + shape_str(x.shape()));
    }
    const auto s = detail::split_at(x.shape(), ax);
    Shape out_shape = x.shape();
    out_shape[ax] = len;
    std::vector<T> out(s.outer * len * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy_n(x.data().data() + (o * s.n + start) * s.inner, len * s.inner,
                    out.data() + o * len * s.inner);
    }
    auto px = x.node_ptr();
    return make_result<T>(out_shape, std::move(out), "slice", {px}, [px, s, start, len](const Node<T>& self) {
        px->ensure_grad();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t j = 0; j < len * s.inner; ++j) {
                px->grad[(o * s.n + start) * s.inner + j] += self.grad[o * len * s.inner + j];
            }
        }
    });
}

/// Repeats a size-1 axis `n` times.
template <class T>
Tensor<T> expand(const Tensor<T>& x, int axis, std::size_t n) {
    const std::size_t ax = detail::norm_axis(axis, x.rank());
    if (x.shape()[ax] != 1 || n == 0) {
        throw ShapeError("expand: axis " + std::to_string(axis) + " of " + shape_str(x.shape()) +
                         " is not a singleton");
    }
    const auto s = detail::split_at(x.shape(), ax);
    Shape out_shape = x.shape();
    out_shape[ax] = n;
    std::vector<T> out(s.outer * n * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t k = 0; k < n; ++k) {
            std::copy_n(x.data().data() + o * s.inner, s.inner, out.data() + (o * n + k) * s.inner);
        }
    }
    auto px = x.node_ptr();
    return make_result<T>(out_shape, std::move(out), "expand", {px}, [px, s, n](const Node<T>& self) {
        px->ensure_grad();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t k = 0; k < n; ++k) {
                for (std::size_t i = 0; i < s.inner; ++i) {
                    px->grad[o * s.inner + i] += self.grad[(o * n + k) * s.inner + i];
                }
            }
        }
    });
}

/// Picks one position per batch item: x [B, L, d], positions[b] < L -> [B, d].
template <class T>
Tensor<T> gather_positions(const Tensor<T>& x, std::span<const std::size_t> positions) {
    if (x.rank() != 3 || positions.size() != x.dim(0)) {
        throw ShapeError("gather_positions: input " + shape_str(x.shape()) + " with " +
                         std::to_string(positions.size()) + " positions");
    }
    const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2);
    std::vector<std::size_t> pos(positions.begin(), positions.end());
    std::vector<T> out(B * d);
    for (std::size_t b = 0; b < B; ++b) {
        if (pos[b] >= L) throw ShapeError("gather_positions: position out of range");
        std::copy_n(x.data().data() + (b * L + pos[b]) * d, d, out.data() + b * d);
    }
    auto px = x.node_ptr();
    return make_result<T>({B, d}, std::move(out), "gather_positions", {px},
                          [px, pos, L, d](const Node<T>& self) {
                              px->ensure_grad();
                              for (std::size_t b = 0; b < pos.size(); ++b) {
                                  for (std::size_t j = 0; j < d; ++j) {
                                      px->grad[(b * L + pos[b]) * d + j] += self.grad[b * d + j];
                                  }
                              }
                          });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
    if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(x.shape()));
    const std::size_t R = x.dim(0), C = x.dim(1);
    std::vector<T> out(R * C);
    detail::MMap<T>(out.data(), C, R) = detail::CMap<T>(x.data().data(), R, C).transpose();
    auto px = x.node_ptr();
    return make_result<T>({C, R}, std::move(out), "transpose", {px}, [px, R, C](const Node<T>& self) {
        px->ensure_grad();
        detail::MMap<T>(px->grad.data(), R, C) += detail::CMap<T>(self.grad.data(), C, R).transpose();
    });
}

namespace detail {

template <class T>
Tensor<T> reduce_axis(const Tensor<T>& x, int axis, bool average) {
    const std::size_t ax = norm_axis(axis, x.rank());
    const auto s = split_at(x.shape(), ax);
    Shape out_shape;
    for (std::size_t i = 0; i < x.rank(); ++i) {
        if (i != ax) out_shape.push_back(x.shape()[i]);
    }
    if (out_shape.empty()) out_shape = {1};
    const T f = average ? T(1) / static_cast<T>(s.n) : T(1);
    std::vector<T> out(s.outer * s.inner, T(0));
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t k = 0; k < s.n; ++k) {
            for (std::size_t i = 0; i < s.inner; ++i) {
                out[o * s.inner + i] += x.data()[(o * s.n + k) * s.inner + i];
            }
        }
    }
    for (auto& v : out) v *= f;
    auto px = x.node_ptr();
    return make_result<T>(out_shape, std::move(out), average ? "mean" : "sum", {px},
                          [px, s, f](const Node<T>& self) {
                              px->ensure_grad();
                              for (std::size_t o = 0; o < s.outer; ++o) {
                                  for (std::size_t k = 0; k < s.n; ++k) {
                                      for (std::size_t i = 0; i < s.inner; ++i) {
                                          px->grad[(o * s.n + k) * s.inner + i] +=
                                              f * self.grad[o * s.inner + i];
                                      }
                                  }
                              }
                          });
}

}  // namespace detail

template <class T>
Tensor<T> sum(const Tensor<T>& x, int axis) {
    return detail::reduce_axis(x, axis, false);
}

template <class T>
Tensor<T> mean(const Tensor<T>& x, int axis) {
    return detail::reduce_axis(x, axis, true);
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
    return mean(reshape(x, {x.numel()}), 0);
}

/// Softmax over the last axis.
template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
    detail::require_finite(x, "softmax");
    const std::size_t C = x.dim(-1), R = x.numel() / C;
    std::vector<T> out(x.numel());
    for (std::size_t r = 0; r < R; ++r) {
        const T* in = x.data().data() + r * C;
        T* o = out.data() + r * C;
        const T mx = *std::max_element(in, in + C);
        T z = 0;
        for (std::size_t c = 0; c < C; ++c) z += (o[c] = std::exp(in[c] - mx));
        for (std::size_t c = 0; c < C; ++c) o[c] /= z;
    }
    auto px = x.node_ptr();
    return make_result<T>(x.shape(), std::move(out), "softmax", {px}, [px, R, C](const Node<T>& self) {
        px->ensure_grad();
        for (std::size_t r = 0; r < R; ++r) {
            const T* y = self.data.data() + r * C;
            const T* g = self.grad.data() + r * C;
            T dot = 0;
            for (std::size_t c = 0; c < C; ++c) dot += y[c] * g[c];
            for (std::size_t c = 0; c < C; ++c) px->grad[r * C + c] += y[c] * (g[c] - dot);
        }
    });
}

/// Layer normalization over the last axis with affine gamma/beta [d].
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    const std::size_t d = x.dim(-1), R = x.numel() / d;
    if (gamma.numel() != d || beta.numel() != d) {
        throw ShapeError("layer_norm: input " + shape_str(x.shape()) + " vs gamma " +
                         shape_str(gamma.shape()));
    }
    std::vector<T> out(x.numel()), xhat(x.numel()), inv_std(R);
    for (std::size_t r = 0; r < R; ++r) {
        const T* in = x.data().data() + r * d;
        T mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += in[j];
        mu /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (in[j] - mu) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    auto px = x.node_ptr(), pg = gamma.node_ptr(), pb = beta.node_ptr();
    return make_result<T>(
        x.shape(), std::move(out), "layer_norm", {px, pg, pb},
        [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std), R, d](const Node<T>& self) {
            if (pg->requires_grad) pg->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            if (px->requires_grad) px->ensure_grad();
            std::vector<T> dxhat(d);
            for (std::size_t r = 0; r < R; ++r) {
                const T* g = self.grad.data() + r * d;
                const T* h = xhat.data() + r * d;
                T mean_dh = 0, mean_dh_h = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    if (pg->requires_grad) pg->grad[j] += g[j] * h[j];
                    if (pb->requires_grad) pb->grad[j] += g[j];
                    dxhat[j] = g[j] * pg->data[j];
                    mean_dh += dxhat[j];
                    mean_dh_h += dxhat[j] * h[j];
                }
                if (!px->requires_grad) continue;
                mean_dh /= static_cast<T>(d);
                mean_dh_h /= static_cast<T>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    px->grad[r * d + j] += inv_std[r] * (dxhat[j] - mean_dh - h[j] * mean_dh_h);
                }
            }
        });
}

/// GELU, exact erf form.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    std::vector<T> out(x.numel());
    const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = x.data()[i];
        out[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
    }
    auto px = x.node_ptr();
    return make_result<T>(x.shape(), std::move(out), "gelu", {px}, [px, inv_sqrt2](const Node<T>& self) {
        px->ensure_grad();
        const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const T v = px->data[i];
            const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
            const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
            px->grad[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x.data()[i], T(0));
    auto px = x.node_ptr();
    return make_result<T>(x.shape(), std::move(out), "relu", {px}, [px](const Node<T>& self) {
        px->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (px->data[i] > T(0)) px->grad[i] += self.grad[i];
        }
    });
}

/// Row lookup: ids with shape `ids_shape` into table [V, d] -> ids_shape + [d].
template <class T>
Tensor<T> embedding(std::span<const std::int32_t> ids, Shape ids_shape, const Tensor<T>& table) {
    if (table.rank() != 2 || shape_numel(ids_shape) != ids.size()) {
        throw ShapeError("embedding: ids " + shape_str(ids_shape) + " vs table " +
                         shape_str(table.shape()));
    }
    const std::size_t V = table.dim(0), d = table.dim(1);
    std::vector<std::int32_t> idv(ids.begin(), ids.end());
    std::vector<T> out(idv.size() * d);
    for (std::size_t i = 0; i < idv.size(); ++i) {
        if (idv[i] < 0 || static_cast<std::size_t>(idv[i]) >= V) {
            throw ShapeError("embedding: id " + std::to_string(idv[i]) + " outside vocabulary of " +
                             std::to_string(V));
        }
        std::copy_n(table.data().data() + static_cast<std::size_t>(idv[i]) * d, d, out.data() + i * d);
    }
    ids_shape.push_back(d);
    auto pt = table.node_ptr();
    return make_result<T>(ids_shape, std::move(out), "embedding", {pt}, [pt, idv, d](const Node<T>& self) {
        pt->ensure_grad();
        for (std::size_t i = 0; i < idv.size(); ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                pt->grad[static_cast<std::size_t>(idv[i]) * d + j] += self.grad[i * d + j];
            }
        }
    });
}

/// Mean cross-entropy of logits [R, C] against integer targets.
///
/// Positions whose mask entry is 0 contribute nothing to the loss or the
/// gradient; the mean is taken over unmasked positions and is 0 when none are.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets,
                        std::span<const std::uint8_t> mask = {}) {
    detail::require_finite(logits, "cross_entropy");
    const std::size_t C = logits.dim(-1), R = logits.numel() / C;
    if (targets.size() != R || (!mask.empty() && mask.size() != R)) {
        throw ShapeError("cross_entropy: " + std::to_string(R) + " rows vs " +
                         std::to_string(targets.size()) + " targets");
    }
    std::vector<std::uint8_t> keep(R, 1);
    if (!mask.empty()) std::copy(mask.begin(), mask.end(), keep.begin());
    std::size_t count = 0;
    for (std::size_t r = 0; r < R; ++r) {
        if (!keep[r]) continue;
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= C) {
            throw std::out_of_range("cross_entropy: target " + std::to_string(targets[r]) +
                                    " outside [0, " + std::to_string(C) + ")");
        }
        ++count;
    }
    std::vector<T> probs(R * C, T(0));
    T total = 0;
    for (std::size_t r = 0; r < R; ++r) {
        if (!keep[r]) continue;
        const T* in = logits.data().data() + r * C;
        const T mx = *std::max_element(in, in + C);
        T z = 0;
        for (std::size_t c = 0; c < C; ++c) z += (probs[r * C + c] = std::exp(in[c] - mx));
        for (std::size_t c = 0; c < C; ++c) probs[r * C + c] /= z;
        total += (mx + std::log(z)) - in[targets[r]];
    }
    const T inv = count ? T(1) / static_cast<T>(count) : T(0);
    std::vector<std::int32_t> tv(targets.begin(), targets.end());
    auto pl = logits.node_ptr();
    return make_result<T>({1}, {total * inv}, "cross_entropy", {pl},
                          [pl, probs = std::move(probs), tv, keep, inv, R, C](const Node<T>& self) {
                              pl->ensure_grad();
                              const T g = self.grad[0] * inv;
                              for (std::size_t r = 0; r < R; ++r) {
                                  if (!keep[r]) continue;
                                  for (std::size_t c = 0; c < C; ++c) {
                                      pl->grad[r * C + c] += g * probs[r * C + c];
                                  }
                                  pl->grad[r * C + static_cast<std::size_t>(tv[r])] -= g;
                              }
                          });
}

/// Mean squared difference over rows (last axis = features) with optional row mask.
template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b, std::span<const std::uint8_t> row_mask = {}) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mse: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const std::size_t d = a.dim(-1), R = a.numel() / d;
    if (!row_mask.empty() && row_mask.size() != R) throw ShapeError("mse: mask length mismatch");
    std::vector<std::uint8_t> keep(R, 1);
    if (!row_mask.empty()) std::copy(row_mask.begin(), row_mask.end(), keep.begin());
    std::size_t count = 0;
    T total = 0;
    for (std::size_t r = 0; r < R; ++r) {
        if (!keep[r]) continue;
        count += d;
        for (std::size_t j = 0; j < d; ++j) {
            const T e = a.data()[r * d + j] - b.data()[r * d + j];
            total += e * e;
        }
    }
    const T inv = count ? T(1) / static_cast<T>(count) : T(0);
    auto pa = a.node_ptr(), pb = b.node_ptr();
    return make_result<T>({1}, {total * inv}, "mse", {pa, pb}, [pa, pb, keep, inv, d](const Node<T>& self) {
        const T g = T(2) * self.grad[0] * inv;
        if (pa->requires_grad) pa->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        for (std::size_t r = 0; r < keep.size(); ++r) {
            if (!keep[r]) continue;
            for (std::size_t j = 0; j < d; ++j) {
                const std::size_t i = r * d + j;
                const T e = g * (pa->data[i] - pb->data[i]);
                if (pa->requires_grad) pa->grad[i] += e;
                if (pb->requires_grad) pb->grad[i] -= e;
            }
        }
    });
}

/// Divides each row (last axis) by its Euclidean norm.
template <class T>
Tensor<T> l2_normalize(const Tensor<T>& x) {
    const std::size_t d = x.dim(-1), R = x.numel() / d;
    std::vector<T> out(x.numel()), norms(R);
    for (std::size_t r = 0; r < R; ++r) {
        T s = 0;
        for (std::size_t j = 0; j < d; ++j) s += x.data()[r * d + j] * x.data()[r * d + j];
        const T n = std::sqrt(s);
        if (!(n > T(0)) || !std::isfinite(n)) {
            throw NumericError("l2_normalize: zero-norm or non-finite row");
        }
        norms[r] = n;
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x.data()[r * d + j] / n;
    }
    auto px = x.node_ptr();
    return make_result<T>(x.shape(), std::move(out), "l2_normalize", {px},
                          [px, norms = std::move(norms), R, d](const Node<T>& self) {
                              px->ensure_grad();
                              for (std::size_t r = 0; r < R; ++r) {
                                  const T* y = self.data.data() + r * d;
                                  const T* g = self.grad.data() + r * d;
                                  T dot = 0;
                                  for (std::size_t j = 0; j < d; ++j) dot += y[j] * g[j];
                                  for (std::size_t j = 0; j < d; ++j) {
                                      px->grad[r * d + j] += (g[j] - y[j] * dot) / norms[r];
                                  }
                              }
                          });
}

/// Scaled dot-product attention over already-projected q [B, Lq, D] and
/// k, v [B, Lk, D], split into `heads` heads of width D/heads.
///
/// `key_mask` (B*Lk entries, 1 = attend) removes keys from the softmax; a query
/// whose keys are all masked produces a zero row.
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                    std::span<const std::uint8_t> key_mask = {}) {
    if (q.rank() != 3 || k.rank() != 3 || v.shape() != k.shape() || q.dim(0) != k.dim(0) ||
        q.dim(2) != k.dim(2)) {
        throw ShapeError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()));
    }
    const std::size_t B = q.dim(0), Lq = q.dim(1), Lk = k.dim(1), D = q.dim(2);
    if (heads == 0 || D % heads != 0) {
        throw ShapeError("attention: " + std::to_string(heads) + " heads do not divide width " +
                         std::to_string(D));
    }
    if (!key_mask.empty() && key_mask.size() != B * Lk) {
        throw ShapeError("attention: key mask has " + std::to_string(key_mask.size()) +
                         " entries, expected " + std::to_string(B * Lk));
    }
    const std::size_t dh = D / heads;
    const T sc = T(1) / std::sqrt(static_cast<T>(dh));
    std::vector<std::uint8_t> km(key_mask.begin(), key_mask.end());
    std::vector<T> probs(B * heads * Lq * Lk);
    std::vector<T> out(B * Lq * D);
    using detail::CStrided;
    using detail::MStrided;
    const Eigen::OuterStride<> st(static_cast<Eigen::Index>(D));
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            CStrided<T> Qh(q.data().data() + b * Lq * D + h * dh, Lq, dh, st);
            CStrided<T> Kh(k.data().data() + b * Lk * D + h * dh, Lk, dh, st);
            CStrided<T> Vh(v.data().data() + b * Lk * D + h * dh, Lk, dh, st);
            detail::MMap<T> A(probs.data() + (b * heads + h) * Lq * Lk, Lq, Lk);
            A.noalias() = (Qh * Kh.transpose()) * sc;
            for (std::size_t i = 0; i < Lq; ++i) {
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < Lk; ++j) {
                    if (km.empty() || km[b * Lk + j]) mx = std::max(mx, A(i, j));
                }
                T z = 0;
                for (std::size_t j = 0; j < Lk; ++j) {
                    const bool on = km.empty() || km[b * Lk + j];
                    A(i, j) = on ? std::exp(A(i, j) - mx) : T(0);
                    z += A(i, j);
                }
                if (z > T(0)) {
                    for (std::size_t j = 0; j < Lk; ++j) A(i, j) /= z;
                }
            }
            MStrided<T>(out.data() + b * Lq * D + h * dh, Lq, dh, st).noalias() = A * Vh;
        }
    }
    auto pq = q.node_ptr(), pk = k.node_ptr(), pv = v.node_ptr();
    return make_result<T>(
        q.shape(), std::move(out), "attention", {pq, pk, pv},
        [pq, pk, pv, probs = std::move(probs), B, Lq, Lk, D, heads, dh, sc](const Node<T>& self) {
            const Eigen::OuterStride<> st(static_cast<Eigen::Index>(D));
            for (auto* p : {pq.get(), pk.get(), pv.get()}) {
                if (p->requires_grad) p->ensure_grad();
            }
            detail::RowMat<T> dA(Lq, Lk), dS(Lq, Lk);
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t qo = b * Lq * D + h * dh, ko = b * Lk * D + h * dh;
                    detail::CMap<T> A(probs.data() + (b * heads + h) * Lq * Lk, Lq, Lk);
                    CStrided<T> dO(self.grad.data() + qo, Lq, dh, st);
                    CStrided<T> Qh(pq->data.data() + qo, Lq, dh, st);
                    CStrided<T> Kh(pk->data.data() + ko, Lk, dh, st);
                    CStrided<T> Vh(pv->data.data() + ko, Lk, dh, st);
                    if (pv->requires_grad) {
                        MStrided<T>(pv->grad.data() + ko, Lk, dh, st).noalias() += A.transpose() * dO;
                    }
                    if (!pq->requires_grad && !pk->requires_grad) continue;
                    dA.noalias() = dO * Vh.transpose();
                    for (std::size_t i = 0; i < Lq; ++i) {
                        T dot = 0;
                        for (std::size_t j = 0; j < Lk; ++j) dot += dA(i, j) * A(i, j);
                        for (std::size_t j = 0; j < Lk; ++j) dS(i, j) = A(i, j) * (dA(i, j) - dot) * sc;
                    }
                    if (pq->requires_grad) {
                        MStrided<T>(pq->grad.data() + qo, Lq, dh, st).noalias() += dS * Kh;
                    }
                    if (pk->requires_grad) {
                        MStrided<T>(pk->grad.data() + ko, Lk, dh, st).noalias() += dS.transpose() * Qh;
                    }
                }
            }
        });
}

}  // namespace tgpt
