#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "tgpt/numerics/rng.hpp"
#include "tgpt/numerics/tensor.hpp"

namespace tgpt {

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    bool passed = true;
};

struct GradCheckReport {
    std::string label;
    double tolerance = 0.0;
    std::vector<GradCheckEntry> entries;

    [[nodiscard]] bool passed() const {
        return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
    }
    [[nodiscard]] double max_rel_error() const {
        double m = 0.0;
        for (const auto& e : entries) m = std::max(m, e.max_rel_error);
        return m;
    }
};

struct GradCheckOptions {
    double eps = 1e-5;
    // Elements checked per parameter; 0 checks every element.
    std::size_t max_elements = 0;
    // Denominator floor of the relative error.
    double floor = 1e-6;
    std::uint64_t seed = 0;
};

inline constexpr double kRoundoffUlps = 64.0;

using NamedParam = std::pair<std::string, Tensor<double>>;

/// Compares reverse-mode gradients of `loss_fn` against central finite
/// differences, per named parameter. `loss_fn` must rebuild the graph from the
/// current parameter values on every call.
inline GradCheckReport grad_check(std::string label, const std::function<Tensor<double>()>& loss_fn,
                                  std::vector<NamedParam> params, double tolerance,
                                  GradCheckOptions opts = {}) {
    GradCheckReport report{std::move(label), tolerance, {}};
    for (auto& [name, p] : params) p.zero_grad();
    const auto loss = loss_fn();
    backward(loss);
    // Central-difference roundoff: values below this are indistinguishable from 0.
    const double noise = kRoundoffUlps * std::numeric_limits<double>::epsilon() *
                         std::max(1.0, std::abs(loss.item())) / opts.eps;
    Rng rng(opts.seed);
    for (auto& [name, p] : params) {
        GradCheckEntry e{name};
        std::vector<double> analytic(p.numel(), 0.0);
        if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
        std::vector<std::size_t> idx(p.numel());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (opts.max_elements && idx.size() > opts.max_elements) {
            rng.shuffle(idx);
            idx.resize(opts.max_elements);
        }
        for (auto i : idx) {
            double& x = p.values()[i];
            const double saved = x;
            x = saved + opts.eps;
            const double up = loss_fn().item();
            x = saved - opts.eps;
            const double down = loss_fn().item();
            x = saved;
            const double numeric = (up - down) / (2.0 * opts.eps);
            if (std::abs(numeric) <= noise && std::abs(analytic[i]) <= noise) {
                ++e.checked;
                continue;
            }
            const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), opts.floor});
            e.max_rel_error = std::max(e.max_rel_error, std::abs(numeric - analytic[i]) / denom);
            ++e.checked;
        }
        e.passed = e.max_rel_error < tolerance;
        report.entries.push_back(std::move(e));
    }
    for (auto& [name, p] : params) p.zero_grad();
    return report;
}

}  // namespace tgpt
