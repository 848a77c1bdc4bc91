#include <fstream>

#include <gtest/gtest.h>

#include "crisp/refiner.hpp"
#include "support.hpp"

using namespace crisp;
using crisp::testing::ScriptedOracle;

namespace {

CompressionResult result_for(const ReasoningTrace& t, std::vector<std::string> steps, const Oracle& o) {
    CompressionResult r;
    r.trace_id = t.id;
    r.compressed_steps = std::move(steps);
    r.original_tokens = total_tokens(o, t.step_texts());
    r.compressed_tokens = total_tokens(o, r.compressed_steps);
    return r;
}

ReasoningTrace answer_trace(const Oracle& o) {
    return crisp::testing::make_spanned_trace("r1", "What is 3 + 4?",
                                              {"Okay so we add three and four.", "3 + 4 = 7.",
                                               "**Final Answer**\nThe answer is $\\boxed{7}$."},
                                              "The answer is $\\boxed{7}$.", o);
}

}  // namespace

TEST(Refine, IdentityRefinerKeepsDraft) {
    SyntheticOracle o;
    auto t = answer_trace(o);
    auto r = result_for(t, {"3 + 4 = 7.", "The answer is $\\boxed{7}$."}, o);
    auto out = refine_chain(t, r, o);
    EXPECT_EQ(out.status, RefineStatus::Refined);
    EXPECT_EQ(out.refined_text, "3 + 4 = 7.\n\nThe answer is $\\boxed{7}$.");
    EXPECT_EQ(out.attempts, 1u);
    EXPECT_TRUE(out.checks.has_boxed_answer);
    EXPECT_TRUE(out.checks.answer_matches_original);
    EXPECT_LT(out.checks.length_ratio, 1.0);
}

TEST(Refine, PassesQueryOriginalAndDraft) {
    ScriptedOracle o;
    std::string seen_q, seen_orig, seen_draft;
    o.on_refine = [&](const std::string& q, const std::string& orig, const std::string& d) {
        seen_q = q;
        seen_orig = orig;
        seen_draft = d;
        return d;
    };
    auto t = answer_trace(o);
    refine_chain(t, result_for(t, {"short", "\\boxed{7}"}, o), o);
    EXPECT_EQ(seen_q, "What is 3 + 4?");
    EXPECT_EQ(seen_orig, join(t.step_texts(), "\n\n"));
    EXPECT_EQ(seen_draft, "short\n\n\\boxed{7}");
}

TEST(Refine, WrongAnswerFallsBackToDraftAfterRetry) {
    ScriptedOracle o;
    int calls = 0;
    o.on_refine = [&](const std::string&, const std::string&, const std::string&) {
        ++calls;
        return std::string("so the answer is \\boxed{8}");
    };
    auto t = answer_trace(o);
    auto out = refine_chain(t, result_for(t, {"3 + 4 = 7 so \\boxed{7}"}, o), o);
    EXPECT_EQ(calls, 2);
    EXPECT_EQ(out.attempts, 2u);
    EXPECT_EQ(out.status, RefineStatus::FallbackDraft);
    EXPECT_EQ(out.refined_text, "3 + 4 = 7 so \\boxed{7}");
}

TEST(Refine, EquivalentFormattingIsAccepted) {
    ScriptedOracle o;
    o.on_refine = [](const std::string&, const std::string&, const std::string&) {
        return std::string("Thus $\\boxed{ 7 }$");
    };
    auto t = answer_trace(o);
    EXPECT_EQ(refine_chain(t, result_for(t, {"x"}, o), o).status, RefineStatus::Refined);
}

TEST(Refine, BackendErrorThenSuccess) {
    ScriptedOracle o;
    int calls = 0;
    o.on_refine = [&](const std::string&, const std::string&, const std::string& d) -> std::string {
        if (calls++ == 0) fail(ErrorCode::BackendUnavailable, "flaky");
        return d;
    };
    auto t = answer_trace(o);
    auto out = refine_chain(t, result_for(t, {"\\boxed{7}"}, o), o);
    EXPECT_EQ(out.status, RefineStatus::Refined);
    EXPECT_EQ(out.attempts, 2u);
}

TEST(Refine, NoAnswerAnywhereIsRejected) {
    ScriptedOracle o;
    o.on_refine = [](const std::string&, const std::string&, const std::string&) { return std::string("no box"); };
    auto t = answer_trace(o);
    auto out = refine_chain(t, result_for(t, {"3 + 4 = 7."}, o), o);
    EXPECT_EQ(out.status, RefineStatus::Rejected);
    EXPECT_FALSE(out.checks.has_boxed_answer);
}

TEST(Refine, MismatchedTraceIdIsRejected) {
    SyntheticOracle o;
    auto t = answer_trace(o);
    auto r = result_for(t, {"x"}, o);
    r.trace_id = "other";
    EXPECT_THROW(refine_chain(t, r, o), Error);
}

TEST(Refine, CaseStudyDraftKeepsAnswer) {
    std::ifstream in(std::string(CRISP_FIXTURES) + "/case_fractions.json");
    auto j = json::parse(in);
    SyntheticOracle o;
    auto t = segment_chain(j["raw"].get<std::string>());
    t.id = j["id"].get<std::string>();
    t.query = j["query"].get<std::string>();
    t.instruction = j["instruction"].get<std::string>();
    auto steps = j["compressed_steps"].get<std::vector<std::string>>();
    auto out = refine_chain(t, result_for(t, steps, o), o);
    EXPECT_EQ(out.status, RefineStatus::Refined);
    EXPECT_EQ(try_extract_boxed_answer(out.refined_text)->normalized, "\\dfrac{2}{3}");
    // the draft is a strict compression of the original chain
    EXPECT_LT(steps.size(), t.steps.size());
    EXPECT_LT(out.checks.length_ratio, 0.5);
}

TEST(Refine, ReportRoundTrip) {
    SyntheticOracle o;
    auto t = answer_trace(o);
    std::vector<RefinementOutcome> outs{refine_chain(t, result_for(t, {"\\boxed{7}"}, o), o),
                                        refine_chain(t, result_for(t, {"nothing"}, o), o)};
    auto dir = crisp::testing::scratch_dir("refine");
    write_refinement_report(outs, (dir / "r.jsonl").string());
    EXPECT_EQ(read_refinement_report((dir / "r.jsonl").string()), outs);
}
