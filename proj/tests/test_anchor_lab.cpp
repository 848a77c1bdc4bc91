#include <cmath>

#include <gtest/gtest.h>

#include "crisp/anchor_lab.hpp"
#include "support.hpp"

using namespace crisp;
using crisp::testing::ScriptedOracle;

TEST(Ppl, HalfProbabilityPerTokenGivesTwo) {
    ScriptedOracle o;
    o.on_score = [](const LikelihoodQuery&) { return LikelihoodResult{4 * std::log(0.5), 4}; };
    EXPECT_NEAR(answer_ppl("q", "c", "a b c d", o), 2.0, 1e-12);
    o.on_score = [](const LikelihoodQuery&) { return LikelihoodResult{0.0, 3}; };
    EXPECT_NEAR(answer_ppl("q", "c", "a", o), 1.0, 1e-15);
}

TEST(Ppl, SyntheticRuleTableByHand) {
    SyntheticSpec spec;
    spec.base_logprob = -6.0;
    spec.rules = {{"alpha", 1.0}, {"beta", 2.0}};
    SyntheticOracle o(spec);
    // context holds alpha and beta once each: logprob = -6 + 3 = -3 over 3 answer tokens
    EXPECT_NEAR(answer_ppl("q", "alpha beta alpha", "x y z", o), std::exp(1.0), 1e-12);
}

TEST(RemovalOrder, PoliciesAndTies) {
    SaliencyProfile p;
    p.scores = {0.3, 0.1, 0.3, 0.5, 0.1};
    EXPECT_EQ(removal_order(p, PrunePolicy::Lowest, 0), (std::vector<std::size_t>{1, 4, 0, 2, 3}));
    EXPECT_EQ(removal_order(p, PrunePolicy::Highest, 0), (std::vector<std::size_t>{3, 0, 2, 1, 4}));
    auto r1 = removal_order(p, PrunePolicy::Random, 5);
    EXPECT_EQ(r1, removal_order(p, PrunePolicy::Random, 5));
    auto sorted = r1;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
    EXPECT_EQ(prune_policy_from_string(to_string(PrunePolicy::Highest)), PrunePolicy::Highest);
}

TEST(Prune, BaselineRowSharedAcrossPolicies) {
    auto inst = crisp::testing::coupled_instance(11);
    SyntheticOracle o(inst.spec);
    auto profile = make_profile(inst.trace, o.attention(inst.trace));
    auto lo = prune_and_score(inst.trace, profile, PrunePolicy::Lowest, 2, o);
    auto hi = prune_and_score(inst.trace, profile, PrunePolicy::Highest, 2, o);
    auto rnd = prune_and_score(inst.trace, profile, PrunePolicy::Random, 2, o, 3);
    ASSERT_EQ(lo.size(), 3u);
    EXPECT_EQ(lo[0].ppl, hi[0].ppl);
    EXPECT_EQ(lo[0].ppl, rnd[0].ppl);
    EXPECT_EQ(lo[0].k_removed, 0u);
    EXPECT_EQ(rnd[1].seed, 3u);
    EXPECT_FALSE(lo[1].seed.has_value());
    EXPECT_NEAR(lo[2].fraction, 2.0 / static_cast<double>(inst.trace.steps.size()), 1e-15);
    for (const auto& r : lo) EXPECT_GT(r.ppl, 0.0);
}

TEST(Prune, KMustBeBelowStepCount) {
    SyntheticOracle o;
    auto t = crisp::testing::make_spanned_trace("k", "q", {"a", "b"}, "ans", o);
    auto p = make_profile(t, o.attention(t));
    try {
        prune_and_score(t, p, PrunePolicy::Lowest, 2, o);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::KTooLarge);
    }
    EXPECT_NO_THROW(prune_and_score(t, p, PrunePolicy::Lowest, 1, o));
}

TEST(Prune, HighestNeverBelowLowestOnCoupledSuite) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto inst = crisp::testing::coupled_instance(seed);
        SyntheticOracle o(inst.spec);
        auto profile = make_profile(inst.trace, o.attention(inst.trace));
        std::size_t max_k = inst.trace.steps.size() - 1;
        auto lo = prune_and_score(inst.trace, profile, PrunePolicy::Lowest, max_k, o);
        auto hi = prune_and_score(inst.trace, profile, PrunePolicy::Highest, max_k, o);
        auto rnd = random_policy_summary(inst.trace, profile, max_k, o, 1000, 100);
        for (std::size_t k = 0; k <= max_k; ++k) {
            EXPECT_GE(hi[k].ppl, lo[k].ppl * (1 - 1e-12)) << "seed " << seed << " k " << k;
            EXPECT_LE(rnd[k].mean_ppl, hi[k].ppl * (1 + 1e-12)) << "seed " << seed << " k " << k;
            EXPECT_GE(rnd[k].mean_ppl, lo[k].ppl * (1 - 1e-12)) << "seed " << seed << " k " << k;
        }
    }
}

TEST(Prune, ZeroGainStepsDoNotMovePpl) {
    SyntheticSpec spec;
    spec.rules = {{"sum", 1.5}, {"product", 0.5}};
    SyntheticOracle o(spec);
    auto t = crisp::testing::make_spanned_trace(
        "z", "q", {"let sum be", "hmm wait okay", "the product is", "just filler words"}, "a b", o);
    auto p = make_profile(t, o.attention(t));
    auto rows = prune_and_score(t, p, PrunePolicy::Lowest, 2, o);
    EXPECT_DOUBLE_EQ(rows[1].ppl, rows[0].ppl);
    EXPECT_DOUBLE_EQ(rows[2].ppl, rows[0].ppl);
    auto tsv = prune_rows_tsv(rows);
    EXPECT_EQ(tsv.rfind("trace_id\tpolicy\tk\tfraction\tppl\tseed\n", 0), 0u);
    EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 4);
}

TEST(Prune, RandomSummaryStatistics) {
    auto inst = crisp::testing::coupled_instance(42);
    SyntheticOracle o(inst.spec);
    auto profile = make_profile(inst.trace, o.attention(inst.trace));
    auto s = random_policy_summary(inst.trace, profile, 1, o, 0, 20);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[0].n_seeds, 20u);
    EXPECT_NEAR(s[0].stddev_ppl, 0.0, 1e-12);
    EXPECT_LE(s[1].min_ppl, s[1].mean_ppl);
    EXPECT_GE(s[1].max_ppl, s[1].mean_ppl);
    EXPECT_THROW(random_policy_summary(inst.trace, profile, 1, o, 0, 0), Error);
}

TEST(Heatmap, AveragesHeads) {
    AttentionDump d;
    d.trace_id = "h";
    d.n_layers = 1;
    d.n_heads = 2;
    d.anchor_position = 2;
    d.rows = {{0.2, 0.8}, {0.4, 0.6}};
    auto h = export_heatmap_data(d);
    ASSERT_EQ(h.layers.size(), 1u);
    EXPECT_NEAR(h.layers[0].values[0], 0.3, 1e-15);
    EXPECT_NEAR(h.layers[0].values[1], 0.7, 1e-15);
}

TEST(Heatmap, PerLayerMeanPassesThroughAndDefaultsToAllLayers) {
    AttentionDump d;
    d.trace_id = "m";
    d.layout = AttentionLayout::PerLayerMean;
    d.n_layers = 3;
    d.n_heads = 1;
    d.anchor_position = 3;
    d.rows = {{0.1, 0.2, 0.3}, {0.3, 0.3, 0.3}, {0.5, 0.25, 0.25}};
    auto all = export_heatmap_data(d);
    ASSERT_EQ(all.layers.size(), 3u);
    for (std::size_t l = 0; l < 3; ++l) {
        EXPECT_EQ(all.layers[l].layer, l);
        EXPECT_EQ(all.layers[l].values, d.rows[l]);
    }
    auto one = export_heatmap_data(d, {2});
    ASSERT_EQ(one.layers.size(), 1u);
    EXPECT_EQ(one.layers[0].values, d.rows[2]);
    EXPECT_THROW(export_heatmap_data(d, {3}), Error);
    EXPECT_EQ(to_json(one)["layers"][0]["layer"], 2);
}
