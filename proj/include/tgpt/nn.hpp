#pragma once

#include <cstdint>
#include <functional>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tgpt/numerics/kernels.hpp"
#include "tgpt/numerics/rng.hpp"

namespace tgpt {

template <class T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

inline constexpr double kInitStd = 0.02;

/// Rank-r update B·A attached to a frozen linear map (W_0 + scale·B·A).
template <class T>
struct LoraAdapter {
    Tensor<T> A;  // [r, in], Gaussian init
    Tensor<T> B;  // [out, r], zero init
    T scale = T(1);

    static LoraAdapter init(std::size_t in, std::size_t out, std::size_t rank, Rng& rng) {
        if (rank == 0) throw std::invalid_argument("lora: rank must be positive");
        return {Tensor<T>::randn({rank, in}, rng, kInitStd, true), Tensor<T>::zeros({out, rank}, true), T(1)};
    }

    [[nodiscard]] std::size_t rank() const { return A.dim(0); }
    [[nodiscard]] std::size_t parameter_count() const { return A.numel() + B.numel(); }
};

/// W_0 + scale·B·A as a fresh tensor.
template <class T>
Tensor<T> lora_merge(const Tensor<T>& base, const LoraAdapter<T>& ad) {
    if (ad.B.dim(0) != base.dim(0) || ad.A.dim(1) != base.dim(1) || ad.A.dim(0) != ad.B.dim(1)) {
        throw ShapeError("lora_merge: base " + shape_str(base.shape()) + " vs B " + shape_str(ad.B.shape()) +
                         ", A " + shape_str(ad.A.shape()));
    }
    const std::size_t out = base.dim(0), in = base.dim(1), r = ad.rank();
    std::vector<T> w(base.values());
    detail::MMap<T>(w.data(), out, in).noalias() +=
        ad.scale * (detail::CMap<T>(ad.B.data().data(), out, r) * detail::CMap<T>(ad.A.data().data(), r, in));
    return Tensor<T>::from(base.shape(), std::move(w));
}

/// Affine map y = x W^T + b with an optional low-rank adapter. Weights start
/// at N(0, 1/in) so activations keep unit scale through depth.
template <class T>
struct Linear {
    Tensor<T> weight;  // [out, in]
    Tensor<T> bias;    // [out] or undefined
    std::optional<LoraAdapter<T>> lora;
    std::optional<Tensor<T>> unmerged_base;

    static Linear init(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true) {
        Linear l;
        l.weight = Tensor<T>::randn({out, in}, rng, 1.0 / std::sqrt(static_cast<double>(in)), true);
        if (with_bias) l.bias = Tensor<T>::zeros({out}, true);
        return l;
    }

    [[nodiscard]] std::size_t in_features() const { return weight.dim(1); }
    [[nodiscard]] std::size_t out_features() const { return weight.dim(0); }
    [[nodiscard]] bool merged() const { return unmerged_base.has_value(); }

    Tensor<T> operator()(const Tensor<T>& x) const {
        auto y = linear(x, weight, bias);
        if (lora && !merged()) {
            auto delta = linear(linear(x, lora->A), lora->B);
            y = add(y, lora->scale == T(1) ? delta : tgpt::scale(delta, lora->scale));
        }
        return y;
    }

    void attach_lora(std::size_t rank, Rng& rng) {
        if (lora) throw std::logic_error("lora: adapter already attached");
        lora = LoraAdapter<T>::init(in_features(), out_features(), rank, rng);
    }

    /// Folds the adapter into the weight; a second merge needs `unmerge` first.
    void merge() {
        if (!lora) throw std::logic_error("lora: no adapter to merge");
        if (merged()) throw std::logic_error("lora: adapter already merged");
        unmerged_base = weight;
        auto merged_w = lora_merge(weight, *lora);
        weight = Tensor<T>::from(merged_w.shape(), merged_w.values(), weight.requires_grad());
    }

    void unmerge() {
        if (!merged()) throw std::logic_error("lora: adapter is not merged");
        weight = *unmerged_base;
        unmerged_base.reset();
    }

    void collect(NamedTensors<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".weight", weight);
        if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
    }

    void collect_lora(NamedTensors<T>& out, const std::string& prefix) const {
        if (!lora) return;
        out.emplace_back(prefix + ".lora_A", lora->A);
        out.emplace_back(prefix + ".lora_B", lora->B);
    }
};

template <class T>
struct LayerNorm {
    Tensor<T> gamma, beta;

    static LayerNorm init(std::size_t d) {
        return {Tensor<T>::full({d}, T(1), true), Tensor<T>::zeros({d}, true)};
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }

    void collect(NamedTensors<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".gamma", gamma);
        out.emplace_back(prefix + ".beta", beta);
    }
};

template <class T>
struct MultiHeadAttention {
    Linear<T> q, k, v, o;
    std::size_t heads = 1;

    static MultiHeadAttention init(std::size_t d, std::size_t heads, Rng& rng) {
        if (heads == 0 || d % heads != 0) {
            throw std::invalid_argument("attention: heads must divide the width");
        }
        return {Linear<T>::init(d, d, rng), Linear<T>::init(d, d, rng), Linear<T>::init(d, d, rng),
                Linear<T>::init(d, d, rng), heads};
    }

    Tensor<T> operator()(const Tensor<T>& xq, const Tensor<T>& xkv,
                         std::span<const std::uint8_t> key_mask = {}) const {
        return o(attention(q(xq), k(xkv), v(xkv), heads, key_mask));
    }

    void collect(NamedTensors<T>& out, const std::string& prefix) const {
        q.collect(out, prefix + ".q");
        k.collect(out, prefix + ".k");
        v.collect(out, prefix + ".v");
        o.collect(out, prefix + ".o");
    }
};

/// Two-layer MLP with GELU, hidden width 4d.
template <class T>
struct FeedForward {
    Linear<T> fc1, fc2;

    static FeedForward init(std::size_t d, Rng& rng) {
        return {Linear<T>::init(d, 4 * d, rng), Linear<T>::init(4 * d, d, rng)};
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return fc2(gelu(fc1(x))); }

    void collect(NamedTensors<T>& out, const std::string& prefix) const {
        fc1.collect(out, prefix + ".fc1");
        fc2.collect(out, prefix + ".fc2");
    }
};

/// Pre-LN encoder block: x + Attn(LN(x)), then + FFN(LN(.)).
template <class T>
struct TransformerBlock {
    LayerNorm<T> ln1;
    MultiHeadAttention<T> attn;
    LayerNorm<T> ln2;
    FeedForward<T> ffn;

    static TransformerBlock init(std::size_t d, std::size_t heads, Rng& rng) {
        return {LayerNorm<T>::init(d), MultiHeadAttention<T>::init(d, heads, rng), LayerNorm<T>::init(d),
                FeedForward<T>::init(d, rng)};
    }

    Tensor<T> operator()(const Tensor<T>& x, std::span<const std::uint8_t> key_mask = {}) const {
        auto h = ln1(x);
        auto y = add(x, attn(h, h, key_mask));
        return add(y, ffn(ln2(y)));
    }

    void collect(NamedTensors<T>& out, const std::string& prefix) const {
        ln1.collect(out, prefix + ".ln1");
        attn.collect(out, prefix + ".attn");
        ln2.collect(out, prefix + ".ln2");
        ffn.collect(out, prefix + ".ffn");
    }

    /// Every linear map in the block by its role name.
    std::vector<std::pair<std::string, Linear<T>*>> linears() {
        return {{"attn.q", &attn.q}, {"attn.k", &attn.k}, {"attn.v", &attn.v},
                {"attn.o", &attn.o}, {"ffn.fc1", &ffn.fc1}, {"ffn.fc2", &ffn.fc2}};
    }
    std::vector<std::pair<std::string, const Linear<T>*>> linears() const {
        return {{"attn.q", &attn.q}, {"attn.k", &attn.k}, {"attn.v", &attn.v},
                {"attn.o", &attn.o}, {"ffn.fc1", &ffn.fc1}, {"ffn.fc2", &ffn.fc2}};
    }
};

/// Copies values from `src` into same-named tensors of `dst` (in place).
/// Throws on a missing name or a shape mismatch.
template <class T, class U>
void assign_by_name(const NamedTensors<T>& dst, const std::map<std::string, Tensor<U>>& src) {
    for (auto [name, t] : dst) {
        auto it = src.find(name);
        if (it == src.end()) throw std::runtime_error("missing parameter '" + name + "'");
        if (it->second.shape() != t.shape()) {
            throw ShapeError("parameter '" + name + "': stored " + shape_str(it->second.shape()) +
                             " vs model " + shape_str(t.shape()));
        }
        auto dv = t.data();
        const auto& sv = it->second.values();
        for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = static_cast<T>(sv[i]);
    }
}

template <class T>
std::map<std::string, Tensor<T>> to_map(const NamedTensors<T>& named) {
    std::map<std::string, Tensor<T>> m;
    for (const auto& [n, t] : named) {
        if (!m.emplace(n, t).second) throw std::logic_error("duplicate parameter name '" + n + "'");
    }
    return m;
}

template <class T>
void set_requires_grad(const NamedTensors<T>& named, bool on) {
    for (auto [n, t] : named) t.set_requires_grad(on);
}

template <class T>
std::size_t count_values(const NamedTensors<T>& named) {
    std::size_t n = 0;
    for (const auto& [name, t] : named) n += t.numel();
    return n;
}

}  // namespace tgpt
