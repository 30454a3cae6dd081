#include <gtest/gtest.h>

#include <chrono>

#include "tgpt/costmodel.hpp"

using namespace tgpt;

TEST(Sequences, PerParadigm) {
    EXPECT_EQ(sequences_for(Paradigm::tgpt, 1000, 8), 16u);
    EXPECT_EQ(sequences_for(Paradigm::coop, 1000, 1), 1000u);
    EXPECT_EQ(sequences_for(Paradigm::coop, 1000, 32), 1000u);
    EXPECT_EQ(sequences_for(Paradigm::cocoop, 196, 8), 1568u);
    EXPECT_THROW(parse_paradigm("maple"), std::invalid_argument);
}

TEST(Activations, ClosedFormAndBreakdown) {
    CostInputs in{Paradigm::coop, 10, 8, 64, 64, 2, 4};
    const auto r = activation_elements(in);
    const std::uint64_t per = 10 * 2;
    EXPECT_EQ(r.attention_maps, per * 64 * 64 * 4);
    EXPECT_EQ(r.projections + r.ffn, per * 16 * 64 * 64);
    EXPECT_EQ(r.attention_maps + r.projections + r.ffn, r.activation_elements);
    in.depth = 4;
    EXPECT_EQ(activation_elements(in).activation_elements, 2 * r.activation_elements);
    in.d = 0;
    EXPECT_THROW(activation_elements(in), std::invalid_argument);
}

TEST(Activations, StrictlyIncreasingInSequences) {
    CostInputs in{Paradigm::coop, 1, 1};
    std::uint64_t prev = 0;
    for (std::uint64_t n = 1; n < 50; ++n) {
        in.n_classes = n;
        const auto cur = activation_elements(in).activation_elements;
        EXPECT_GT(cur, prev);
        prev = cur;
    }
}

TEST(Scaling, EighteenRowsAndFlags) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto t = scaling_table({10, 100, 1000}, {1, 8});
    EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 1.0);
    EXPECT_EQ(t.rows.size(), 18u);
    EXPECT_TRUE(t.tgpt_constant_in_n);
    EXPECT_TRUE(t.coop_increasing_in_n);
    EXPECT_TRUE(t.cocoop_is_bs_times_coop);
    const auto& c10 = t.find(Paradigm::coop, 10, 8), &c1000 = t.find(Paradigm::coop, 1000, 8);
    EXPECT_EQ(c1000.report.activation_elements, 100 * c10.report.activation_elements);
    EXPECT_EQ(t.find(Paradigm::cocoop, 1000, 8).report.activation_elements, 8 * c1000.report.activation_elements);
    EXPECT_EQ(t.find(Paradigm::tgpt, 10, 8).report.activation_elements,
              t.find(Paradigm::tgpt, 1000, 8).report.activation_elements);
    const auto csv = t.csv();
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "paradigm,N,bs,sequences,activation_elements");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 19);
    EXPECT_THROW(scaling_table({}, {1}), std::invalid_argument);
}
