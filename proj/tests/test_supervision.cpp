#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "tgpt/numerics/adamw.hpp"
#include "tgpt/supervision.hpp"

using namespace tgpt;

namespace {

struct Text {
    Rng rng{11};
    TextEncoder<float> enc{TextEncoderConfig{32, 1, 2, 16, 50, PromptPooling::last_position}, rng};
};

}  // namespace

TEST(Supervision, ScaledTargetRowsGiveNearZeroLoss) {
    // Orthogonal one-hot embedding rows make P W_E^T exactly 100 * I on targets.
    const std::size_t V = 20, d = 24, K = 6;
    auto W = Tensor<float>::zeros({V, d});
    for (std::size_t i = 0; i < V; ++i) W.values()[i * d + i] = 1.0F;
    const std::vector<std::int32_t> ids{1, 7, 9, 4, 2, 0};
    const std::vector<std::uint8_t> mask{1, 1, 1, 1, 1, 0};
    auto P = Tensor<float>::zeros({1, K, d});
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < d; ++j) P.values()[k * d + j] = 100.0F * W.at(static_cast<std::size_t>(ids[k]) * d + j);
    }
    EXPECT_LT(text_supervision_loss(P, ids, mask, W).item(), 0.01F);
}

TEST(Supervision, FullyPaddedTargetGivesZeroLossAndGradient) {
    Rng r(1);
    auto W = Tensor<float>::randn({10, 8}, r, 1.0);
    auto P = Tensor<float>::randn({1, 4, 8}, r, 1.0, true);
    const std::vector<std::int32_t> ids(4, 0);
    const std::vector<std::uint8_t> mask(4, 0);
    auto loss = text_supervision_loss(P, ids, mask, W);
    EXPECT_EQ(loss.item(), 0.0F);
    backward(loss);
    for (float g : P.grad()) EXPECT_EQ(g, 0.0F);
}

TEST(Supervision, RandomPromptsNearLogVocab) {
    Rng r(2);
    auto W = Tensor<float>::randn({50, 64}, r, 0.02);
    auto P = Tensor<float>::randn({4, 32, 64}, r, 0.02);
    std::vector<std::int32_t> ids(128);
    for (auto& i : ids) i = static_cast<std::int32_t>(r.below(50));
    const std::vector<std::uint8_t> mask(128, 1);
    EXPECT_NEAR(text_supervision_loss(P, ids, mask, W).item(), std::log(50.0), 0.5);
}

TEST(Supervision, LengthMismatchRejected) {
    auto W = Tensor<float>::zeros({10, 8});
    const std::vector<std::int32_t> ids(5, 1);
    const std::vector<std::uint8_t> mask(5, 1);
    EXPECT_THROW(text_supervision_loss(Tensor<float>::zeros({1, 4, 8}), ids, mask, W), ShapeError);
}

TEST(Supervision, EmbeddingNeverReceivesGradient) {
    Text t;
    NamedTensors<float> weights;
    t.enc.collect(weights);
    set_requires_grad(weights, false);
    Rng r(3);
    auto P = Tensor<float>::randn({2, 4, 32}, r, 0.5, true);
    const std::vector<std::int32_t> ids{1, 5, 6, 2, 1, 7, 2, 0};
    const std::vector<std::uint8_t> mask{1, 1, 1, 1, 1, 1, 1, 0};
    for (auto space : {SupervisionSpace::vocabulary, SupervisionSpace::embedding, SupervisionSpace::latent}) {
        P.zero_grad();
        backward(supervision_loss(space, P, ids, mask, t.enc));
        for (const auto& [name, w] : weights) EXPECT_FALSE(w.has_grad()) << name << " " << to_string(space);
        EXPECT_TRUE(P.has_grad());
        if (space != SupervisionSpace::latent) {
            for (std::size_t j = 0; j < 32; ++j) EXPECT_EQ(P.grad()[7 * 32 + j], 0.0F);
        }
    }
}

TEST(Supervision, DescentStepDoesNotIncreaseLoss) {
    Rng r(4);
    int increases = 0;
    for (int trial = 0; trial < 100; ++trial) {
        auto W = Tensor<double>::randn({30, 16}, r, 1.0);
        auto P = Tensor<double>::randn({1, 5, 16}, r, 1.0, true);
        std::vector<std::int32_t> ids(5);
        for (auto& i : ids) i = static_cast<std::int32_t>(r.below(30));
        const std::vector<std::uint8_t> mask{1, 1, 1, 1, static_cast<std::uint8_t>(trial % 2)};
        auto before = text_supervision_loss(P, ids, mask, W);
        backward(before);
        for (std::size_t i = 0; i < P.numel(); ++i) P.values()[i] -= 1e-3 * P.grad()[i];
        increases += text_supervision_loss(P, ids, mask, W).item() > before.item();
    }
    EXPECT_EQ(increases, 0);
}

TEST(Supervision, AlternativeSpacesVanishOnMatchingTargets) {
    Text t;
    const std::vector<std::int32_t> ids{1, 8, 9, 2};
    const std::vector<std::uint8_t> mask{1, 1, 1, 1};
    auto P = embedding<float>(ids, {1, 4}, t.enc.token_embedding());
    EXPECT_EQ(supervision_loss(SupervisionSpace::embedding, P, ids, mask, t.enc).item(), 0.0F);
    auto f = t.enc.encode_ids(ids, mask, 1);
    auto cos = sum(mul(f, f), -1);
    EXPECT_NEAR(1.0F - cos.item(), 0.0F, 1e-6F);
    EXPECT_THROW(parse_supervision_space("pixel"), std::invalid_argument);
}

TEST(ContentDescription, ExactSentence) {
    GlyphAttributes a;
    a.color = 0;
    a.shape = 2;
    a.position = 0;
    a.distractor_count = 2;
    a.distractor_color = 2;
    a.distractor_shape = 1;
    EXPECT_EQ(content_description(a), "a red triangle near the top left with two blue squares");
    a.distractor_count = 0;
    EXPECT_EQ(content_description(a), "a red triangle near the top left");
}

TEST(ContentDescription, VariesWithinClassAndNamesClassWords) {
    GlyphAttributes a, b;
    a.color = b.color = 1;
    a.shape = b.shape = 3;
    a.position = 0;
    b.position = 8;
    EXPECT_NE(content_description(a), content_description(b));
    for (const auto& s : {content_description(a), content_description(b)}) {
        EXPECT_NE(s.find("green"), std::string::npos);
        EXPECT_NE(s.find("diamond"), std::string::npos);
    }
}

TEST(Templates, SingleTemplateSubstitution) {
    const TemplateRegistry reg({"red triangle"}, {kGlyphTemplate});
    Rng r(0);
    EXPECT_EQ(reg.category_description(0, r), "a photo of a red triangle, a type of glyph.");
    EXPECT_THROW(reg.category_description(1, r), std::out_of_range);
}

TEST(Templates, SevenTemplatesUniform) {
    const auto ts = seven_templates();
    ASSERT_EQ(ts.size(), 7u);
    const TemplateRegistry reg({"g-07"}, ts);
    Rng r(9);
    std::map<std::string, int> counts;
    const int n = 10000;
    for (int i = 0; i < n; ++i) ++counts[reg.category_description(0, r)];
    EXPECT_EQ(counts.size(), 7u);
    for (const auto& [s, c] : counts) EXPECT_NEAR(static_cast<double>(c) / n, 1.0 / 7, 0.05 / 7) << s;
}

TEST(Templates, SameSeedSameSequence) {
    const TemplateRegistry reg({"a", "b"}, seven_templates());
    Rng r1(4), r2(4);
    for (int i = 0; i < 50; ++i) EXPECT_EQ(reg.category_description(i % 2, r1), reg.category_description(i % 2, r2));
}
