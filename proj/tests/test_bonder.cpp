#include <gtest/gtest.h>

#include "tgpt/bonder.hpp"
#include "tgpt/numerics/gradcheck.hpp"

using namespace tgpt;

namespace {

template <class T>
VisualFeatures<T> random_visual(std::size_t B, std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng r(seed);
    return {l2_normalize(Tensor<T>::randn({B, d}, r, 1.0)), Tensor<T>::randn({B, n, d}, r, 1.0)};
}

template <class T>
void zero(Linear<T>& l) {
    std::fill(l.weight.values().begin(), l.weight.values().end(), T(0));
    if (l.bias.defined()) std::fill(l.bias.values().begin(), l.bias.values().end(), T(0));
}

}  // namespace

TEST(Bonder, DefaultBranchShapes) {
    Rng rng(0);
    const auto pair = make_branch_pair<float>(BranchPairConfig{}, rng);
    EXPECT_EQ(pair.category.k(), 32u);
    EXPECT_EQ(pair.content.k(), 64u);
    const auto vis = random_visual<float>(3, 16, 64, 1);
    EXPECT_EQ(pair.category.forward(vis).shape(), (Shape{3, 32, 64}));
    EXPECT_EQ(pair.content.forward(vis).shape(), (Shape{3, 64, 64}));
}

TEST(Bonder, ZeroedSublayersGiveResidualIdentity) {
    Rng rng(1);
    BonderConfig cfg;
    cfg.depth = 2;
    Bonder<float> b(cfg, rng);
    for (auto& blk : b.blocks()) {
        zero(blk.self_attn.o);
        zero(blk.cross_attn.o);
        zero(blk.ffn.fc2);
    }
    auto Q = Tensor<float>::randn({32, 64}, rng, 0.02);
    const auto P = b.forward(Q, random_visual<float>(2, 16, 64, 2));
    for (std::size_t bi = 0; bi < 2; ++bi) {
        for (std::size_t i = 0; i < Q.numel(); ++i) ASSERT_EQ(P.at(bi * Q.numel() + i), Q.at(i));
    }
}

TEST(Bonder, BatchEqualsPerItem) {
    Rng rng(2);
    Bonder<float> b(BonderConfig{}, rng);
    auto Q = Tensor<float>::randn({8, 64}, rng, 0.02);
    const auto vis = random_visual<float>(4, 16, 64, 3);
    const auto batched = b.forward(Q, vis);
    for (std::size_t i = 0; i < 4; ++i) {
        VisualFeatures<float> one{slice(vis.v, 0, i, 1), slice(vis.X, 0, i, 1)};
        const auto single = b.forward(Q, one);
        for (std::size_t j = 0; j < single.numel(); ++j) EXPECT_NEAR(single.at(j), batched.at(i * single.numel() + j), 1e-6);
    }
}

TEST(Bonder, SharedFlagAliasesWeightsButNotQueries) {
    Rng rng(3);
    BranchPairConfig cfg;
    cfg.share_bonder = true;
    const auto pair = make_branch_pair<float>(cfg, rng);
    EXPECT_EQ(pair.category.bonder.get(), pair.content.bonder.get());
    EXPECT_NE(pair.category.queries.node(), pair.content.queries.node());
}

TEST(Bonder, UnsharedBranchesAreIndependent) {
    Rng rng(4);
    auto pair = make_branch_pair<float>(BranchPairConfig{}, rng);
    ASSERT_NE(pair.category.bonder.get(), pair.content.bonder.get());
    const auto before = pair.content.bonder->blocks()[0].ffn.fc1.weight.values();
    auto& w = pair.category.bonder->blocks()[0].ffn.fc1.weight.values();
    for (auto& x : w) x += 1.0F;
    EXPECT_EQ(pair.content.bonder->blocks()[0].ffn.fc1.weight.values(), before);
}

TEST(Bonder, StructuresAndDepthLimits) {
    Rng rng(5);
    const auto vis = random_visual<float>(2, 16, 64, 6);
    for (auto s : {BonderStructure::cross_attention, BonderStructure::self_attention, BonderStructure::meta_net}) {
        BonderConfig cfg;
        cfg.structure = s;
        Bonder<float> b(cfg, rng);
        EXPECT_EQ(b.forward(Tensor<float>::zeros({4, 64}), vis).shape(), (Shape{2, 4, 64})) << to_string(s);
    }
    BonderConfig deep;
    deep.depth = kMaxBonderDepth + 1;
    EXPECT_THROW(deep.validate(), std::invalid_argument);
    Bonder<float> b(BonderConfig{}, rng);
    EXPECT_THROW(b.forward(Tensor<float>::zeros({4, 32}), vis), ShapeError);
}

TEST(Bonder, GradientsMatchFiniteDifferences) {
    Rng rng(6);
    BonderConfig cfg{16, 2, 1, BonderStructure::cross_attention};
    Bonder<double> b(cfg, rng);
    auto Q = Tensor<double>::randn({3, 16}, rng, 0.5, true);
    const auto vis = random_visual<double>(2, 4, 16, 7);
    const auto w = Tensor<double>::randn({2, 3, 16}, rng, 1.0);
    NamedTensors<double> params{{"Q", Q}};
    b.collect(params, "bonder");
    GradCheckOptions opts;
    opts.max_elements = 10;
    const auto r = grad_check(
        "bonder", [&] { return sum(reshape(mul(b.forward(Q, vis), w), {96}), 0); }, params, 1e-4, opts);
    EXPECT_TRUE(r.passed()) << r.max_rel_error();
}
