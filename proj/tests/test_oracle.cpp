#include <cmath>

#include <gtest/gtest.h>

#include "crisp/oracle.hpp"
#include "crisp/synthetic_oracle.hpp"
#include "support.hpp"

using namespace crisp;

TEST(Prompts, RewriteTemplateIsVerbatim) {
    auto p = render_rewrite_prompt("Step X");
    EXPECT_EQ(p.system,
              "You are an expert at condensing reasoning steps. Your task is to rewrite the given reasoning step to be "
              "more concise while preserving all essential information and logical flow.\n"
              "Rules:\n"
              "1. Keep all key facts, numbers, and logical connections.\n"
              "2. Remove redundant phrases and verbose expressions.\n"
              "3. Maintain the mathematical or logical correctness.\n"
              "4. Output ONLY the condensed step, no explanations.");
    EXPECT_EQ(p.user,
              "Compress this reasoning step as short as possible:\n"
              "<step> Step X </step>\n"
              "Compressed:");
}

TEST(Prompts, FuseTemplateIsVerbatim) {
    auto p = render_fuse_prompt("first", "second");
    EXPECT_EQ(p.system,
              "You are an expert at merging reasoning steps. Your task is to combine two consecutive reasoning steps "
              "into a single, coherent step while preserving all essential information.\n"
              "Rules:\n"
              "1. Preserve all key facts, numbers, and calculations.\n"
              "2. Maintain logical flow and correctness.\n"
              "3. Remove redundant information that appears in both steps.\n"
              "4. The merged step should be shorter than the sum of both steps.\n"
              "5. Output ONLY the merged step, no explanations.");
    EXPECT_EQ(p.user,
              "Merge these two steps into one step as short as possible:\n"
              "Step 1: first\n"
              "Step 2: second\n"
              "Merged:");
}

TEST(Prompts, RefineTemplateIsVerbatim) {
    auto p = render_refine_prompt("Q?", "long chain", "short draft");
    EXPECT_EQ(p.system,
              "You are an expert mathematical editor. Your task is to refine a rough reasoning draft. Restore logical "
              "continuity and mathematical accuracy. Match the Original CoT's exact tone, formatting, and style.");
    EXPECT_EQ(p.user,
              "### Question\nQ?\n\n"
              "### Original CoT (ONLY for Reference)\nlong chain\n\n"
              "### Rough Draft (To Refine)\nshort draft\n\n"
              "### Instruction\n"
              "Refine the Rough Draft to ensure mathematical coherence and logical flow.\n"
              "1. Fill in missing algebraic manipulations and arithmetic calculations.\n"
              "2. Match the style and formatting of the Original CoT.\n"
              "3. Output ONLY the refined reasoning text.\n"
              "4. Ensure the calculations lead correctly to the final answer.\n\n"
              "### Refined Rough Solution:");
}

TEST(Prompts, EditDispatchAndArity) {
    EXPECT_EQ(render_edit_prompt(EditRequest::rewrite("a")).user, render_rewrite_prompt("a").user);
    EXPECT_EQ(render_edit_prompt(EditRequest::fuse("a", "b")).user, render_fuse_prompt("a", "b").user);
    EditRequest bad{EditKind::Fuse, {"only one"}, "fuse-v1"};
    EXPECT_THROW(render_edit_prompt(bad), Error);
}

TEST(ScoringPrompt, QueryThenInstruction) {
    auto t = crisp::testing::make_trace("t", "What is 2+2?", {"a"}, "\\boxed{4}");
    EXPECT_EQ(scoring_prompt(t), "What is 2+2?\n" + std::string(kStandardInstruction));
    t.instruction.clear();
    EXPECT_EQ(scoring_prompt(t), "What is 2+2?");
}

TEST(Similarity, CosineExamples) {
    EXPECT_NEAR(Oracle::cosine({1, 0}, {1, 0}), 1.0, 1e-12);
    EXPECT_NEAR(Oracle::cosine({1, 0}, {0, 1}), 0.0, 1e-12);
    EXPECT_NEAR(Oracle::cosine({1, 0}, {std::sqrt(3.0), 1}), std::sqrt(3.0) / 2, 1e-12);
    EXPECT_EQ(Oracle::cosine({0, 0}, {1, 1}), 0.0);
    SyntheticOracle o;
    // bag-of-words: 3 shared words out of 3 and 4 -> 3 / (sqrt 3 * 2)
    EXPECT_NEAR(o.similarity("a b c", "a b c d"), 0.866, 1e-3);
    EXPECT_NEAR(o.similarity("Sum is 5.", "sum IS 5"), 1.0, 1e-12);
}

TEST(Synthetic, RewriteDropsStopWords) {
    SyntheticOracle o;
    EXPECT_EQ(o.apply_edit(EditRequest::rewrite("so I need to compute the sum")), "need compute sum");
    EXPECT_THROW(o.apply_edit(EditRequest::rewrite("so the")), Error);
}

TEST(Synthetic, FuseKeepsNewSentencesOnly) {
    SyntheticOracle o;
    EXPECT_EQ(o.apply_edit(EditRequest::fuse("A is 1. B is 2.", "B is 2. C is 3.")), "A is 1. B is 2. C is 3.");
}

TEST(Synthetic, LikelihoodIsBasePlusDistinctKeywordGains) {
    SyntheticSpec spec;
    spec.base_logprob = -10;
    spec.rules = {{"sum", 1.5}, {"product", 0.5}};
    SyntheticOracle o(spec);
    auto r = o.score({"q", "the sum and the sum and product", "five tokens in this answer"});
    EXPECT_DOUBLE_EQ(r.logprob_sum, -8.0);
    EXPECT_EQ(r.n_answer_tokens, 5u);
    EXPECT_DOUBLE_EQ(o.answer_logprob({"q", "", "x"}), -10.0);
    EXPECT_THROW(o.score({"q", "c", ""}), Error);
}

TEST(Synthetic, ContextLimitsAndOutages) {
    SyntheticSpec spec;
    spec.max_context_tokens = 5;
    spec.unavailable_marker = "@@down@@";
    SyntheticOracle o(spec);
    try {
        o.score({"q", "one two three four five six", "a"});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ContextTooLong);
    }
    try {
        o.score({"q", "@@down@@", "a"});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::BackendUnavailable);
    }
}

TEST(Synthetic, TokenizerSplitsThinkTags) {
    SyntheticOracle o;
    auto r = o.tokenize("<think>a b</think>c");
    ASSERT_EQ(r.count, 5u);
    EXPECT_EQ(r.spans[0], (CharSpan{0, 7}));
    EXPECT_EQ(r.spans[3], (CharSpan{10, 18}));
}

TEST(Synthetic, AttentionRowsAreNormalizedAndCoupledToGain) {
    SyntheticSpec spec;
    spec.rules = {{"key", 2.0}};
    SyntheticOracle o(spec);
    auto t = crisp::testing::make_spanned_trace("a", "q", {"plain words here", "the key word"}, "\\boxed{1}", o);
    auto d = o.attention(t);
    EXPECT_NO_THROW(validate(d));
    double sum = 0.0;
    for (double w : d.rows[0]) sum += w;
    EXPECT_NEAR(sum, spec.row_mass, 1e-12);
    auto scores = score_steps(t, d);
    EXPECT_GT(scores[1], scores[0]);
}

TEST(Spans, FillTokenSpansCoversEachStep) {
    SyntheticOracle o;
    auto t = crisp::testing::make_spanned_trace("a", "q", {"one two", "three", "four five six"}, "x", o);
    // tokens: <think> one two three four five six </think> x
    EXPECT_EQ(t.steps[0].token_span, (TokenSpan{1, 3}));
    EXPECT_EQ(t.steps[1].token_span, (TokenSpan{3, 4}));
    EXPECT_EQ(t.steps[2].token_span, (TokenSpan{4, 7}));
    EXPECT_EQ(total_tokens(o, t.step_texts()), 6u);
}
