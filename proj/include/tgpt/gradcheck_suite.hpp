#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tgpt/numerics/gradcheck.hpp"
#include "tgpt/numerics/kernels.hpp"
#include "tgpt/trainer.hpp"

namespace tgpt {

inline constexpr double kKernelTolerance = 1e-4;
inline constexpr double kGraphTolerance = 1e-4;
inline constexpr double kLinearTolerance = 1e-6;

/// One kernel under test: random input shapes and the kernel applied to them.
struct KernelCase {
    std::string name;
    std::vector<Shape> inputs;
    std::function<Tensor<double>(const std::vector<Tensor<double>>&)> fn;
};

namespace detail {

inline std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

/// Runs `old` twice, doubling every gradient it hands to its parents.
template <class T>
void corrupt_node(Tensor<T>& y) {
    auto* n = y.node();
    auto old = n->backward;
    n->backward = [old](const Node<T>& self) {
        old(self);
        old(self);
    };
}

}  // namespace detail

/// Every differentiable kernel on randomized shapes up to 16 x 32.
inline std::vector<KernelCase> kernel_cases(std::uint64_t seed) {
    Rng rng(seed);
    auto R = [&] { return detail::draw(rng, 2, 16); };
    auto C = [&] { return detail::draw(rng, 2, 32); };
    std::vector<KernelCase> cases;
    using V = std::vector<Tensor<double>>;

    {
        const auto r = R(), k = C(), c = C();
        cases.push_back({"matmul", {{r, k}, {k, c}}, [](const V& in) { return matmul(in[0], in[1]); }});
    }
    {
        const auto r = R(), i = C(), o = C();
        cases.push_back({"linear", {{r, i}, {o, i}, {o}}, [](const V& in) { return linear(in[0], in[1], in[2]); }});
    }
    {
        const auto r = R(), c = C();
        cases.push_back({"add", {{r, c}, {c}}, [](const V& in) { return add(in[0], in[1]); }});
        cases.push_back({"mul", {{r, c}, {r, c}}, [](const V& in) { return mul(in[0], in[1]); }});
        cases.push_back({"scale", {{r, c}}, [](const V& in) { return scale(in[0], -1.7); }});
        cases.push_back({"reshape", {{r, c}}, [r, c](const V& in) { return reshape(in[0], {c, r}); }});
        cases.push_back({"transpose", {{r, c}}, [](const V& in) { return transpose(in[0]); }});
        cases.push_back({"sum", {{r, c}}, [](const V& in) { return sum(in[0], 0); }});
        cases.push_back({"mean", {{r, c}}, [](const V& in) { return mean(in[0], -1); }});
        cases.push_back({"mean_all", {{r, c}}, [](const V& in) { return mean_all(in[0]); }});
        cases.push_back({"softmax", {{r, c}}, [](const V& in) { return softmax(in[0]); }});
        cases.push_back({"gelu", {{r, c}}, [](const V& in) { return gelu(in[0]); }});
        cases.push_back({"relu", {{r, c}}, [](const V& in) { return relu(in[0]); }});
        cases.push_back({"l2_normalize", {{r, c}}, [](const V& in) { return l2_normalize(in[0]); }});
        cases.push_back({"layer_norm", {{r, c}, {c}, {c}},
                         [](const V& in) { return layer_norm(in[0], in[1], in[2]); }});
    }
    {
        const auto r = R(), c1 = C(), c2 = C();
        cases.push_back({"concat", {{r, c1}, {r, c2}}, [](const V& in) { return concat<double>({in[0], in[1]}, -1); }});
        const auto start = rng.below(c1 - 1), len = 1 + rng.below(c1 - start - 1);
        cases.push_back({"slice", {{r, c1}}, [start, len](const V& in) { return slice(in[0], 1, start, len); }});
        const auto n = R();
        cases.push_back({"expand", {{r, 1, c2}}, [n](const V& in) { return expand(in[0], 1, n); }});
    }
    {
        const auto b = R(), l = R(), d = C();
        std::vector<std::size_t> pos(b);
        for (auto& p : pos) p = rng.below(l);
        cases.push_back({"gather_positions", {{b, l, d}},
                         [pos](const V& in) { return gather_positions<double>(in[0], pos); }});
    }
    {
        const auto vocab = C(), d = C(), n = R();
        std::vector<std::int32_t> ids(n);
        for (auto& i : ids) i = static_cast<std::int32_t>(rng.below(vocab));
        cases.push_back({"embedding", {{vocab, d}},
                         [ids, n](const V& in) { return embedding<double>(ids, {n}, in[0]); }});
    }
    {
        const auto r = R(), c = C();
        std::vector<std::int32_t> tg(r);
        std::vector<std::uint8_t> mask(r);
        for (std::size_t i = 0; i < r; ++i) {
            tg[i] = static_cast<std::int32_t>(rng.below(c));
            mask[i] = i == 0 || rng.uniform() < 0.7;
        }
        cases.push_back({"cross_entropy", {{r, c}}, [tg, mask](const V& in) { return cross_entropy(in[0], tg, mask); }});
        std::vector<std::uint8_t> rows(r);
        for (std::size_t i = 0; i < r; ++i) rows[i] = i == 0 || rng.uniform() < 0.7;
        cases.push_back({"mse", {{r, c}, {r, c}}, [rows](const V& in) { return mse(in[0], in[1], rows); }});
    }
    {
        const std::size_t heads = 2, d = 2 * detail::draw(rng, 1, 8), b = detail::draw(rng, 1, 3);
        const auto lq = R(), lk = R();
        std::vector<std::uint8_t> mask(b * lk);
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = i % lk == 0 || rng.uniform() < 0.75;
        cases.push_back({"attention", {{b, lq, d}, {b, lk, d}, {b, lk, d}}, [mask, heads](const V& in) {
                             return attention(in[0], in[1], in[2], heads, mask);
                         }});
    }
    return cases;
}

/// Gradient check of one kernel case under a random linear read-out.
/// `corrupt` names a kernel whose backward is sabotaged (negative control).
inline GradCheckReport check_kernel(const KernelCase& kc, std::uint64_t seed, const std::string& corrupt = "") {
    Rng rng(seed);
    std::vector<Tensor<double>> inputs;
    std::vector<NamedParam> params;
    for (std::size_t i = 0; i < kc.inputs.size(); ++i) {
        inputs.push_back(Tensor<double>::randn(kc.inputs[i], rng, 1.0, true));
        params.emplace_back(kc.name + ".in" + std::to_string(i), inputs.back());
    }
    const auto probe = kc.fn(inputs);
    const auto weights = Tensor<double>::randn(probe.shape(), rng, 1.0);
    auto loss = [&] {
        auto y = kc.fn(inputs);
        if (kc.name == corrupt) detail::corrupt_node(y);
        return y.numel() == 1 ? y : sum(reshape(mul(y, weights), {y.numel()}), 0);
    };
    return grad_check(kc.name, loss, params, kKernelTolerance);
}

inline std::vector<GradCheckReport> kernel_gradchecks(std::uint64_t seed = 0, const std::string& corrupt = "") {
    std::vector<GradCheckReport> out;
    std::uint64_t k = 0;
    for (const auto& kc : kernel_cases(seed)) out.push_back(check_kernel(kc, seed * 1000 + ++k, corrupt));
    return out;
}

/// Linear layer under cross-entropy, checked at the tighter tolerance.
inline GradCheckReport linear_ce_gradcheck(std::uint64_t seed = 0) {
    Rng rng(seed);
    auto x = Tensor<double>::randn({6, 10}, rng, 1.0);
    auto lin = Linear<double>::init(10, 5, rng);
    lin.weight = Tensor<double>::randn({5, 10}, rng, 0.5, true);
    const std::vector<std::int32_t> y{0, 1, 2, 3, 4, 0};
    return grad_check("linear_cross_entropy", [&] { return cross_entropy(lin(x), y); },
                      {{"weight", lin.weight}, {"bias", lin.bias}}, kLinearTolerance);
}

/// Small double-precision configuration of the whole prompt-tuning graph.
inline TrainConfig gradcheck_config(bool lora) {
    TrainConfig c;
    c.d = 16;
    c.heads = 2;
    c.image_depth = 1;
    c.text_depth = 1;
    c.max_len = 8;
    c.k_ctg = 4;
    c.k_con = 6;
    c.lora_policy = lora ? "mlp_both" : "none";
    c.lora_rank = 2;
    return c;
}

/// Bonder -> supervision losses -> prompt encoding -> fusion head -> summed
/// loss, all trainable tensors (adapters included when `lora`).
inline GradCheckReport full_graph_gradcheck(bool lora, std::uint64_t seed = 0, std::size_t max_elements = 12) {
    const TrainConfig cfg = gradcheck_config(lora);
    Rng rng(seed);
    const auto vocab = Vocabulary::build({"a red circle near the top left with two blue squares",
                                          "a photo of a g-07, a type of glyph."});
    auto model = make_tgpt_model(make_encoders<double>(cfg, vocab.size(), rng), cfg, 3);
    for (auto& [name, t] : lora_parameters(model.encoders)) {
        // Nonzero B so that both adapter factors receive gradient.
        if (name.ends_with("lora_B")) t.values() = Tensor<double>::randn(t.shape(), rng, 0.1).values();
    }
    const std::size_t B = 2;
    std::vector<float> images(B * kImageValues);
    for (auto& p : images) p = static_cast<float>(rng.uniform());
    BatchTargets tg;
    tg.labels = {0, 2};
    for (std::size_t b = 0; b < B; ++b) {
        tg.content.append(vocab.tokenize(b ? "a red circle near the top" : "two blue squares", cfg.k_con));
        tg.category.append(vocab.tokenize("a photo of a g-07,", cfg.k_ctg));
    }
    auto loss = [&] {
        const auto vis = model.encoders.image.encode(images, B);
        return tgpt_losses(model, vis, tg, LossTerms::both, SupervisionSpace::vocabulary).total;
    };
    GradCheckOptions opts;
    opts.max_elements = max_elements;
    opts.seed = seed;
    return grad_check(lora ? "full_graph_lora" : "full_graph", loss, model.trainable_parameters(), kGraphTolerance,
                      opts);
}

/// Every report the `gradcheck` command prints.
inline std::vector<GradCheckReport> gradcheck_suite(std::uint64_t seed = 0) {
    auto out = kernel_gradchecks(seed);
    out.push_back(linear_ce_gradcheck(seed));
    out.push_back(full_graph_gradcheck(false, seed));
    out.push_back(full_graph_gradcheck(true, seed));
    return out;
}

}  // namespace tgpt
