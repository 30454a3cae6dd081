#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "tgpt/numerics/tensor.hpp"

namespace tgpt {

struct AdamWHyper {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

/// Moment buffers for one flat parameter array.
template <class T>
struct AdamWMoments {
    std::vector<T> m;
    std::vector<T> v2;
};

/// One decoupled-weight-decay Adam update of `param` in place.
///
/// The decay multiplies the parameter by (1 - lr * wd) before the Adam step,
/// independent of the gradient. `step` is the 1-based index of this update and
/// drives bias correction.
template <class T>
void adamw_update(std::span<T> param, std::span<const T> grad, AdamWMoments<T>& mom,
                  const AdamWHyper& h, std::uint64_t step) {
    if (grad.size() != param.size() || mom.m.size() != param.size() || mom.v2.size() != param.size()) {
        throw ShapeError("adamw: parameter of " + std::to_string(param.size()) + " values vs grad " +
                         std::to_string(grad.size()) + " / moments " + std::to_string(mom.m.size()));
    }
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
    const T decay = static_cast<T>(1.0 - h.lr * h.weight_decay);
    const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
    for (std::size_t i = 0; i < param.size(); ++i) {
        const T g = grad[i];
        mom.m[i] = b1 * mom.m[i] + (T(1) - b1) * g;
        mom.v2[i] = b2 * mom.v2[i] + (T(1) - b2) * g * g;
        const double mhat = static_cast<double>(mom.m[i]) / c1;
        const double vhat = static_cast<double>(mom.v2[i]) / c2;
        param[i] = param[i] * decay - static_cast<T>(h.lr * mhat / (std::sqrt(vhat) + h.eps));
    }
}

/// AdamW over a fixed list of parameter tensors.
///
/// Parameters without an accumulated gradient are skipped for that step
/// (no decay, no moment update), matching the usual framework behaviour.
template <class T>
class AdamW {
public:
    AdamW(std::vector<Tensor<T>> params, AdamWHyper hyper) : params_(std::move(params)), hyper_(hyper) {
        for (const auto& p : params_) {
            moments_.push_back({std::vector<T>(p.numel(), T(0)), std::vector<T>(p.numel(), T(0))});
        }
    }

    void step() {
        ++step_;
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = params_[k];
            if (!p.has_grad()) continue;
            adamw_update<T>(p.data(), p.grad(), moments_[k], hyper_, step_);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    [[nodiscard]] std::uint64_t step_count() const { return step_; }
    [[nodiscard]] const AdamWHyper& hyper() const { return hyper_; }
    [[nodiscard]] const std::vector<Tensor<T>>& params() const { return params_; }
    [[nodiscard]] const AdamWMoments<T>& moments(std::size_t k) const { return moments_.at(k); }

private:
    std::vector<Tensor<T>> params_;
    std::vector<AdamWMoments<T>> moments_;
    AdamWHyper hyper_;
    std::uint64_t step_ = 0;
};

}  // namespace tgpt
