#include <gtest/gtest.h>

#include <cmath>

#include "tgpt/lora.hpp"

using namespace tgpt;

namespace {

DualEncoder<float> toy_encoders(std::uint64_t seed) {
    Rng rng(seed);
    return {ImageEncoder<float>(ImageEncoderConfig{}, rng),
            TextEncoder<float>(TextEncoderConfig{64, 2, 4, 64, 40, PromptPooling::last_position}, rng)};
}

}  // namespace

TEST(Lora, ZeroInitIsBitwiseNeutral) {
    Rng rng(0);
    auto lin = Linear<float>::init(64, 64, rng);
    const auto x = Tensor<float>::randn({5, 64}, rng, 1.0);
    const auto base = lin(x);
    lin.attach_lora(4, rng);
    EXPECT_EQ(lin(x).values(), base.values());
    EXPECT_EQ(lin.lora->parameter_count(), 512u);
    lin.merge();
    EXPECT_EQ(lin.weight.values(), lin.unmerged_base->values());
}

TEST(Lora, AdaptedForwardMatchesDenseOracle) {
    Rng rng(1);
    auto lin = Linear<float>::init(12, 10, rng);
    lin.attach_lora(3, rng);
    lin.lora->B = Tensor<float>::randn({10, 3}, rng, 0.5, true);
    const auto x = Tensor<float>::randn({4, 12}, rng, 1.0);
    const auto y = lin(x);
    for (std::size_t n = 0; n < 4; ++n) {
        for (std::size_t o = 0; o < 10; ++o) {
            double acc = lin.bias.at(o);
            for (std::size_t i = 0; i < 12; ++i) {
                double w = lin.weight.at(o * 12 + i);
                for (std::size_t r = 0; r < 3; ++r) w += double(lin.lora->B.at(o * 3 + r)) * lin.lora->A.at(r * 12 + i);
                acc += w * x.at(n * 12 + i);
            }
            EXPECT_NEAR(y.at(n * 10 + o), acc, 1e-5);
        }
    }
}

TEST(Lora, GradientsReachOnlyAdapter) {
    Rng rng(2);
    auto lin = Linear<float>::init(8, 8, rng);
    lin.weight.set_requires_grad(false);
    lin.bias.set_requires_grad(false);
    lin.attach_lora(2, rng);
    backward(mean_all(lin(Tensor<float>::randn({3, 8}, rng, 1.0))));
    EXPECT_FALSE(lin.weight.has_grad());
    EXPECT_TRUE(lin.lora->A.has_grad());
    EXPECT_TRUE(lin.lora->B.has_grad());
}

TEST(Lora, MergeEquivalenceAndDoubleMergeGuard) {
    Rng rng(3);
    auto lin = Linear<float>::init(64, 64, rng);
    lin.attach_lora(4, rng);
    lin.lora->B = Tensor<float>::randn({64, 4}, rng, 0.1, true);
    std::vector<Tensor<float>> xs, adapted;
    for (int i = 0; i < 100; ++i) {
        xs.push_back(Tensor<float>::randn({1, 64}, rng, 1.0));
        adapted.push_back(lin(xs.back()));
    }
    lin.merge();
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
        const auto y = lin(xs[i]);
        for (std::size_t j = 0; j < 64; ++j) worst = std::max(worst, double(std::abs(y.at(j) - adapted[i].at(j))));
    }
    EXPECT_LE(worst, 1e-6);
    EXPECT_THROW(lin.merge(), std::logic_error);
    lin.unmerge();
    EXPECT_NO_THROW(lin.merge());
}

TEST(Lora, PlacementCountsAndRatio) {
    auto enc = toy_encoders(4);
    Rng rng(5);
    const auto rep = apply_lora_placement(enc, LoraPolicy::mlp_both, 4, rng);
    EXPECT_EQ(rep.adapters, 8u);
    EXPECT_EQ(lora_parameters(enc).size(), 16u);
    EXPECT_LT(rep.ratio(), 0.02);
    EXPECT_GT(rep.trainable, 0u);
}

TEST(Lora, PoliciesSelectTheirTowers) {
    for (auto [policy, adapters] : std::vector<std::pair<LoraPolicy, std::size_t>>{
             {LoraPolicy::none, 0}, {LoraPolicy::mlp_visual, 4}, {LoraPolicy::mlp_text, 4},
             {LoraPolicy::mlp_and_attention_both, 24}}) {
        auto enc = toy_encoders(6);
        Rng rng(7);
        EXPECT_EQ(apply_lora_placement(enc, policy, 4, rng).adapters, adapters) << to_string(policy);
    }
    EXPECT_THROW(parse_lora_policy("everything"), std::invalid_argument);
}

TEST(Lora, RankSweepAccepted) {
    for (auto r : kLoraRankSweep) {
        auto enc = toy_encoders(8);
        Rng rng(9);
        EXPECT_NO_THROW(apply_lora_placement(enc, LoraPolicy::mlp_both, r, rng)) << r;
    }
}

TEST(Lora, MergeAllFoldsEveryAdapter) {
    auto enc = toy_encoders(10);
    Rng rng(11);
    apply_lora_placement(enc, LoraPolicy::mlp_both, 2, rng);
    merge_all_lora(enc);
    for (auto& blk : enc.text.blocks()) EXPECT_TRUE(blk.ffn.fc1.merged());
    EXPECT_THROW(merge_all_lora(enc), std::logic_error);
}
