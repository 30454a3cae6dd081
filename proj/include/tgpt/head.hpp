#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tgpt/numerics/adamw.hpp"
#include "tgpt/numerics/kernels.hpp"
#include "tgpt/nn.hpp"

namespace tgpt {

inline constexpr double kDefaultTemperature = 0.01;

/// Single linear layer over [v ; fused text feature], followed by softmax.
/// Stored as weight [N, 2d] (transpose of the 2d x N map) plus bias [N].
template <class T>
struct Projector {
    Linear<T> fc;

    static Projector init(std::size_t d, std::size_t n_classes, Rng& rng) {
        if (n_classes == 0) throw std::invalid_argument("projector: class count must be positive");
        return {Linear<T>::init(2 * d, n_classes, rng)};
    }

    [[nodiscard]] std::size_t n_classes() const { return fc.out_features(); }
    [[nodiscard]] std::size_t input_dim() const { return fc.in_features(); }

    void collect(NamedTensors<T>& out, const std::string& prefix = "projector") const { fc.collect(out, prefix); }
};

template <class T>
struct FusedOutput {
    Tensor<T> features;  // [B, 2d] projector input
    Tensor<T> logits;    // [B, N]
};

/// fused = (t_con + t_ctg) / 2; logits = [v ; fused] W^T + b.
template <class T>
FusedOutput<T> fuse_and_project(const Tensor<T>& v, const Tensor<T>& t_con, const Tensor<T>& t_ctg,
                                const Projector<T>& proj) {
    if (v.shape() != t_con.shape() || v.shape() != t_ctg.shape() || v.rank() != 2 ||
        2 * v.dim(1) != proj.input_dim()) {
        throw ShapeError("fuse_and_classify: v " + shape_str(v.shape()) + ", t_con " + shape_str(t_con.shape()) +
                         ", t_ctg " + shape_str(t_ctg.shape()) + ", projector input " +
                         std::to_string(proj.input_dim()));
    }
    auto fused = scale(add(t_con, t_ctg), T(0.5));
    auto features = concat<T>({v, fused}, -1);
    return {features, proj.fc(features)};
}

template <class T>
Tensor<T> fuse_and_classify(const Tensor<T>& v, const Tensor<T>& t_con, const Tensor<T>& t_ctg,
                            const Projector<T>& proj) {
    return softmax(fuse_and_project(v, t_con, t_ctg, proj).logits);
}

/// Cross-entropy of logits [B, N] against labels in [0, N).
template <class T>
Tensor<T> classification_loss(const Tensor<T>& logits, std::span<const std::int32_t> labels) {
    const std::size_t N = logits.dim(-1);
    for (auto y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= N) {
            throw std::out_of_range("classification_loss: label " + std::to_string(y) + " outside [0, " +
                                    std::to_string(N) + ")");
        }
    }
    return cross_entropy(logits, labels);
}

/// softmax(cos(v, t_i) / tau) over class text features t [N, d]; v is [B, d].
template <class T>
Tensor<T> zero_shot_predict(const Tensor<T>& v, const Tensor<T>& class_text, T tau = T(kDefaultTemperature)) {
    if (!(tau > T(0))) throw std::invalid_argument("zero_shot_predict: temperature must be positive");
    // Normalizing rejects zero-norm features and keeps the similarity a cosine.
    auto sims = linear(l2_normalize(v), l2_normalize(class_text));
    return softmax(scale(sims, T(1) / tau));
}

struct LinearProbeConfig {
    std::size_t iterations = 300;
    double lr = 1e-2;
    double l2_reg = 1e-4;
    std::uint64_t seed = 0;
};

/// Multinomial logistic regression on frozen features [M, d] (full batch AdamW).
template <class T>
Linear<T> linear_probe_fit(const Tensor<T>& features, std::span<const std::int32_t> labels,
                           std::size_t n_classes, const LinearProbeConfig& cfg) {
    if (features.rank() != 2 || labels.size() != features.dim(0)) {
        throw ShapeError("linear_probe_fit: features " + shape_str(features.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    std::vector<std::size_t> per_class(n_classes, 0);
    for (auto y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= n_classes) throw std::out_of_range("linear_probe_fit: bad label");
        ++per_class[static_cast<std::size_t>(y)];
    }
    for (std::size_t c = 0; c < n_classes; ++c) {
        if (per_class[c] == 0) throw std::invalid_argument("linear_probe_fit: class " + std::to_string(c) + " has no samples");
    }
    Rng rng(cfg.seed);
    auto probe = Linear<T>::init(features.dim(1), n_classes, rng);
    AdamW<T> opt({probe.weight, probe.bias}, {cfg.lr, 0.9, 0.999, 1e-8, cfg.l2_reg});
    const auto x = features.detach();
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        opt.zero_grad();
        backward(cross_entropy(probe(x), labels));
        opt.step();
    }
    opt.zero_grad();
    return probe;
}

template <class T>
std::vector<std::int32_t> argmax_rows(const Tensor<T>& scores) {
    const std::size_t C = scores.dim(-1), R = scores.numel() / C;
    std::vector<std::int32_t> out(R);
    for (std::size_t r = 0; r < R; ++r) {
        const T* row = scores.data().data() + r * C;
        out[r] = static_cast<std::int32_t>(std::max_element(row, row + C) - row);
    }
    return out;
}

inline double accuracy(std::span<const std::int32_t> pred, std::span<const std::int32_t> labels) {
    if (pred.size() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
    if (pred.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace tgpt
