#include <gtest/gtest.h>

#include "crisp/metrics.hpp"
#include "te_table.hpp"

using namespace crisp;

namespace {

std::size_t word_count(const std::string& s) { return words(s).size(); }

EvalRecord correct_with_steps(std::size_t steps, bool correct = true) {
    EvalRecord r;
    r.n_steps = steps;
    r.correct = correct;
    return r;
}

/// Reference TE with the two-decimal rounding done on the decimal string.
double te_via_printf(double acc, double tok) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", acc / tok * 100.0);
    return std::stod(buf);
}

}  // namespace

TEST(TokenEfficiency, WorkedExamples) {
    EXPECT_NEAR(round2(token_efficiency(90.1, 374)), 24.09, 1e-9);
    EXPECT_NEAR(round2(token_efficiency(80.6, 587)), 13.73, 1e-9);
    EXPECT_NEAR(token_efficiency(89.2, 369), 24.18, 0.01);
    EXPECT_EQ(token_efficiency(50.0, 0.0), 0.0);
}

TEST(TokenEfficiency, OriginalAndMethodRowsMatchPublishedValues) {
    for (const auto& r : crisp::testing::te_rows()) {
        std::string method = r.method;
        if (method != "Original" && method != "CRISP") continue;
        EXPECT_TRUE(crisp::testing::te_matches(r)) << r.key();
    }
}

TEST(TokenEfficiency, OnlyKnownSourceInconsistenciesDisagree) {
    std::set<std::string> mismatched;
    for (const auto& r : crisp::testing::te_rows()) {
        if (!crisp::testing::te_matches(r)) mismatched.insert(r.key());
        // rounding independent of round2's implementation
        EXPECT_NEAR(round2(token_efficiency(r.accuracy, r.tokens)), te_via_printf(r.accuracy, r.tokens), 0.010001);
    }
    EXPECT_EQ(crisp::testing::te_rows().size(), 152u);
    EXPECT_EQ(mismatched, crisp::testing::te_source_inconsistencies());
}

TEST(Rationals, Parsing) {
    auto eq = [](const char* s, std::int64_t n, std::int64_t d) {
        auto r = parse_rational(s);
        ASSERT_TRUE(r.has_value()) << s;
        EXPECT_EQ(*r, (Rational{n, d})) << s;
    };
    eq("2/3", 2, 3);
    eq("\\dfrac{2}{3}", 2, 3);
    eq("\\frac{4}{6}", 2, 3);
    eq("\\tfrac{-1}{2}", -1, 2);
    eq("-\\frac{1}{2}", -1, 2);
    eq("0.5", 1, 2);
    eq("1,000", 1000, 1);
    eq("\\frac{\\frac{1}{2}}{3}", 1, 6);
    eq("  7 ", 7, 1);
    EXPECT_FALSE(parse_rational("x").has_value());
    EXPECT_FALSE(parse_rational("1/0").has_value());
    EXPECT_FALSE(parse_rational("1,00").has_value());
    EXPECT_FALSE(parse_rational("\\sqrt{2}").has_value());
}

TEST(Rationals, Equivalence) {
    EXPECT_TRUE(answers_equivalent("\\dfrac{2}{3}", "2/3"));
    EXPECT_TRUE(answers_equivalent("\\text{yes}", "yes"));
    EXPECT_TRUE(answers_equivalent("0.50", "1/2"));
    EXPECT_FALSE(answers_equivalent("2/3", "3/2"));
    EXPECT_FALSE(answers_equivalent("x+1", "1+x"));
}

TEST(Grade, Examples) {
    auto r = grade("a", "<think>step\n\nmore</think>The answer is \\boxed{2/3}.", "2/3", word_count);
    EXPECT_TRUE(r.correct);
    EXPECT_FALSE(r.truncated);
    EXPECT_EQ(r.n_steps, 2u);
    EXPECT_EQ(r.token_count, 5u);

    auto frac = grade("b", "<think>x</think>\\boxed{\\dfrac{2}{3}}", "2/3", word_count);
    EXPECT_TRUE(frac.correct);

    auto none = grade("c", "<think>still thinking", "2/3", word_count);
    EXPECT_FALSE(none.correct);
    EXPECT_TRUE(none.truncated);
    EXPECT_FALSE(none.extracted.has_value());

    auto wrong = grade("d", "<think>x</think>\\boxed{5}", "2/3", word_count);
    EXPECT_FALSE(wrong.correct);
    EXPECT_TRUE(wrong.extracted.has_value());
}

TEST(Report, AccuracyTokensAndTable) {
    std::vector<EvalRecord> recs(4);
    for (std::size_t i = 0; i < 4; ++i) {
        recs[i].correct = i < 3;
        recs[i].token_count = 100 * (i + 1);
    }
    auto m = report(recs, 1024);
    EXPECT_DOUBLE_EQ(m.accuracy, 75.0);
    EXPECT_DOUBLE_EQ(m.mean_tokens, 250.0);
    EXPECT_DOUBLE_EQ(m.token_efficiency, 30.0);
    EXPECT_EQ(m.budget, 1024u);
    auto table = format_report_table({{"method", m}});
    EXPECT_NE(table.find("Acc."), std::string::npos);
    EXPECT_NE(table.find("30.00"), std::string::npos);
    EXPECT_NE(table.find("1024"), std::string::npos);
    EXPECT_EQ(report({}).n, 0u);
}

TEST(Trajectory, WorkedExample) {
    auto s = trajectory_stats({correct_with_steps(10), correct_with_steps(20), correct_with_steps(30)});
    EXPECT_DOUBLE_EQ(s.mean_steps_correct, 20.0);
    EXPECT_NEAR(s.cumulative_at(20), 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(s.cumulative_at(9), 0.0, 1e-12);
    EXPECT_NEAR(s.cumulative_at(100), 1.0, 1e-12);
    auto empty = trajectory_stats({});
    EXPECT_TRUE(empty.histogram.empty());
    EXPECT_TRUE(empty.cumulative.empty());
    EXPECT_FALSE(empty.steps_to_reach(0.8).has_value());
}

TEST(Trajectory, CumulativeIsMonotoneAndEndsAtAccuracy) {
    std::vector<EvalRecord> recs;
    for (std::size_t i = 0; i < 40; ++i) recs.push_back(correct_with_steps(1 + (i * 7) % 13, i % 3 != 0));
    auto s = trajectory_stats(recs);
    double prev = 0.0;
    for (const auto& [k, v] : s.cumulative) {
        EXPECT_GE(v, prev);
        prev = v;
    }
    double acc = 0;
    for (const auto& r : recs) acc += r.correct;
    EXPECT_NEAR(prev, acc / static_cast<double>(recs.size()), 1e-12);
}

TEST(Trajectory, StepsToReachShiftsWithOffset) {
    const std::size_t offset = 7;
    std::vector<EvalRecord> base, shifted;
    for (std::size_t i = 1; i <= 20; ++i) {
        base.push_back(correct_with_steps(i, i % 5 != 0));
        shifted.push_back(correct_with_steps(i + offset, i % 5 != 0));
    }
    // 16 of 20 correct -> overall accuracy exactly 0.80
    auto a = trajectory_stats(base).steps_to_reach(0.80);
    auto b = trajectory_stats(shifted).steps_to_reach(0.80);
    ASSERT_TRUE(a && b);
    EXPECT_EQ(*b - *a, offset);
    EXPECT_EQ(to_json(trajectory_stats(base))["steps_to_reach_0.80"], *a);
}
