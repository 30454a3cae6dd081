#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "tgpt/gradcheck_suite.hpp"
#include "tgpt/numerics/adamw.hpp"
#include "tgpt/numerics/gradcheck.hpp"
#include "tgpt/numerics/kernels.hpp"
#include "tgpt/numerics/rng.hpp"
#include "tgpt/numerics/tensor.hpp"

using namespace tgpt;

namespace {

Tensor<double> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, bool grad = false) {
    Rng rng(seed);
    return Tensor<double>::randn({r, c}, rng, 1.0, grad);
}

}  // namespace

TEST(Tensor, ShapeAndDataAgree) {
    auto t = Tensor<float>::zeros({2, 3, 4});
    EXPECT_EQ(t.numel(), 24u);
    EXPECT_EQ(t.dim(-1), 4u);
    EXPECT_THROW((void)t.dim(3), ShapeError);
    EXPECT_THROW(Tensor<float>::from({2, 2}, {1, 2, 3}), ShapeError);
}

TEST(Kernels, SoftmaxOfZerosIsUniform) {
    auto y = softmax(Tensor<double>::zeros({1, 3}));
    for (double v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
}

TEST(Kernels, SoftmaxRowsSumToOne) {
    auto y = softmax(scale(random_matrix(7, 13, 4), 5.0));
    for (std::size_t r = 0; r < 7; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 13; ++c) s += y.at(r * 13 + c);
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Kernels, MatmulByIdentity) {
    auto I = Tensor<double>::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto A = random_matrix(3, 3, 1);
    EXPECT_EQ(matmul(I, A).values(), A.values());
}

TEST(Kernels, MatmulShapeErrorNamesBothShapes) {
    try {
        matmul(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({4, 5}));
        FAIL();
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[4,5]"), std::string::npos) << msg;
    }
}

TEST(Kernels, LayerNormRowsAreStandardized) {
    auto x = scale(random_matrix(8, 16, 2), 3.0);
    auto y = layer_norm(x, Tensor<double>::full({16}, 1.0), Tensor<double>::zeros({16}));
    for (std::size_t r = 0; r < 8; ++r) {
        double m = 0, v = 0;
        for (std::size_t c = 0; c < 16; ++c) m += y.at(r * 16 + c);
        m /= 16;
        for (std::size_t c = 0; c < 16; ++c) v += (y.at(r * 16 + c) - m) * (y.at(r * 16 + c) - m);
        v /= 16;
        EXPECT_NEAR(m, 0.0, 1e-6);
        EXPECT_NEAR(v, 1.0, 1e-4);
    }
}

TEST(Kernels, CrossEntropyHandOracle) {
    const double expected = std::log(std::exp(2.0) + 2.0) - 2.0;
    const std::vector<std::int32_t> t{0};
    auto loss = cross_entropy(Tensor<double>::from({1, 3}, {2, 0, 0}), t);
    EXPECT_NEAR(loss.item(), expected, 1e-12);
    EXPECT_NEAR(loss.item(), 0.2395, 1e-3);
}

TEST(Kernels, CrossEntropyMaskedPositionsGetZeroGradient) {
    auto logits = random_matrix(4, 5, 3, true);
    const std::vector<std::int32_t> t{1, 2, 3, 4};
    const std::vector<std::uint8_t> mask{1, 0, 1, 0};
    auto loss = cross_entropy(logits, t, mask);
    // Oracle: mean of the two unmasked rows.
    double expected = 0;
    for (std::size_t r : {0u, 2u}) {
        double z = 0;
        for (std::size_t c = 0; c < 5; ++c) z += std::exp(logits.at(r * 5 + c));
        expected += std::log(z) - logits.at(r * 5 + t[r]);
    }
    EXPECT_NEAR(loss.item(), expected / 2, 1e-12);
    EXPECT_GE(loss.item(), 0.0);
    backward(loss);
    for (std::size_t r : {1u, 3u}) {
        for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(logits.grad()[r * 5 + c], 0.0);
    }
}

TEST(Kernels, L2NormalizeGivesUnitRows) {
    auto y = l2_normalize(scale(random_matrix(6, 9, 5), 40.0));
    for (std::size_t r = 0; r < 6; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 9; ++c) s += y.at(r * 9 + c) * y.at(r * 9 + c);
        EXPECT_NEAR(std::sqrt(s), 1.0, 1e-6);
    }
}

TEST(Kernels, NonFiniteInputRejected) {
    auto x = Tensor<double>::from({1, 2}, {std::nan(""), 0.0});
    EXPECT_THROW(softmax(x), NumericError);
    const std::vector<std::int32_t> t{0};
    EXPECT_THROW(cross_entropy(x, t), NumericError);
}

TEST(Backward, SquareAtThree) {
    auto x = Tensor<double>::scalar(3.0, true);
    backward(mul(x, x));
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, MeanSpreadsEvenly) {
    auto x = random_matrix(1, 10, 7, true);
    backward(mean_all(x));
    for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 0.1);
}

TEST(Backward, RepeatedCallsAccumulate) {
    auto x = Tensor<double>::scalar(2.0, true);
    auto y = mul(x, x);
    backward(y);
    backward(y);
    EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
}

TEST(Backward, NonScalarLossRejected) {
    auto x = random_matrix(2, 2, 1, true);
    EXPECT_THROW(backward(x), ShapeError);
}

TEST(AdamW, ZeroGradZeroDecayLeavesParameter) {
    std::vector<double> p{1.5}, g{0.0};
    AdamWMoments<double> m{{0.0}, {0.0}};
    adamw_update<double>(p, g, m, {0.1, 0.9, 0.999, 1e-8, 0.0}, 1);
    EXPECT_EQ(p[0], 1.5);
}

TEST(AdamW, SingleStepHandComputation) {
    // m = 0.1, v = 0.001; bias-corrected both are 1, so the step is lr.
    const double mhat = 0.1 / (1 - 0.9), vhat = 0.001 / (1 - 0.999);
    const double expected = 1.0 - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
    std::vector<double> p{1.0}, g{1.0};
    AdamWMoments<double> m{{0.0}, {0.0}};
    adamw_update<double>(p, g, m, {0.1, 0.9, 0.999, 1e-8, 0.0}, 1);
    EXPECT_NEAR(p[0], expected, 1e-12);
    EXPECT_NEAR(p[0], 0.9, 1e-6);
}

TEST(AdamW, DecoupledDecayScalesByOneMinusLrWd) {
    std::vector<double> p{2.0}, g{0.0};
    AdamWMoments<double> m{{0.0}, {0.0}};
    adamw_update<double>(p, g, m, {0.1, 0.9, 0.999, 1e-8, 0.1}, 1);
    EXPECT_NEAR(p[0], 2.0 * (1 - 0.01), 1e-15);
}

TEST(AdamW, DefaultsAndShapeCheck) {
    AdamWHyper h;
    EXPECT_EQ(h.lr, 5e-5);
    EXPECT_EQ(h.weight_decay, 1e-4);
    std::vector<double> p{1.0, 2.0}, g{1.0};
    AdamWMoments<double> m{{0.0, 0.0}, {0.0, 0.0}};
    EXPECT_THROW(adamw_update<double>(p, g, m, h, 1), ShapeError);
}

TEST(AdamW, OptimizerSkipsParametersWithoutGradient) {
    auto a = Tensor<double>::scalar(1.0, true), b = Tensor<double>::scalar(1.0, true);
    AdamW<double> opt({a, b}, {0.1, 0.9, 0.999, 1e-8, 0.5});
    backward(mul(a, a));
    opt.step();
    EXPECT_NE(a.item(), 1.0);
    EXPECT_EQ(b.item(), 1.0);
    EXPECT_EQ(opt.step_count(), 1u);
}

TEST(GradCheck, LinearCrossEntropyAtTightTolerance) {
    const auto r = linear_ce_gradcheck(0);
    EXPECT_TRUE(r.passed()) << r.max_rel_error();
    EXPECT_LT(r.max_rel_error(), 1e-6);
}

TEST(GradCheck, EveryKernelOnRandomShapes) {
    for (std::uint64_t seed : {0u, 1u}) {
        for (const auto& r : kernel_gradchecks(seed)) {
            EXPECT_TRUE(r.passed()) << r.label << " " << r.max_rel_error();
        }
    }
}

TEST(GradCheck, CorruptedBackwardFailsAndNamesKernel) {
    for (const std::string victim : {"softmax", "attention", "layer_norm"}) {
        bool named = false;
        for (const auto& r : kernel_gradchecks(0, victim)) {
            if (r.label == victim) {
                EXPECT_FALSE(r.passed()) << victim;
                named = true;
            } else {
                EXPECT_TRUE(r.passed()) << r.label;
            }
        }
        EXPECT_TRUE(named);
    }
}

TEST(GradCheck, FullGraphWithAndWithoutLora) {
    for (bool lora : {false, true}) {
        const auto r = full_graph_gradcheck(lora, 0);
        EXPECT_TRUE(r.passed()) << r.label << " " << r.max_rel_error();
        EXPECT_FALSE(r.entries.empty());
    }
}

TEST(Rng, SameSeedSameStreamAndSplitsDiffer) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
    Rng base(42);
    EXPECT_NE(base.split(1).next_u64(), base.split(2).next_u64());
    EXPECT_EQ(base.split(1).next_u64(), Rng(42).split(1).next_u64());
}

TEST(Determinism, IdenticalSeedGivesBitwiseIdenticalLoss) {
    auto run = [] {
        Rng rng(9);
        auto w = Tensor<float>::randn({8, 8}, rng, 0.3, true);
        auto x = Tensor<float>::randn({4, 8}, rng, 1.0);
        AdamW<float> opt({w}, {1e-2, 0.9, 0.999, 1e-8, 1e-4});
        std::vector<float> losses;
        const std::vector<std::int32_t> t{0, 3, 5, 7};
        for (int i = 0; i < 20; ++i) {
            opt.zero_grad();
            auto l = cross_entropy(softmax(matmul(x, w)), t);
            backward(l);
            opt.step();
            losses.push_back(l.item());
        }
        return losses;
    };
    EXPECT_EQ(run(), run());
}
