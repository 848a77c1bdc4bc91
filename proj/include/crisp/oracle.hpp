#pragma once

/**
 * Oracle gateway: every model-dependent capability behind one interface.
 *
 * Implementations:
 *   - SyntheticOracle (synthetic_oracle.hpp): deterministic rule-based
 *     backend for tests and desk-scale experiments.
 *   - AdapterOracle (adapter_client.hpp): HTTP client for the model adapter
 *     sidecar.
 *
 * All operations must be referentially transparent for a fixed backend
 * configuration. Implementations are called from several worker threads.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "error.hpp"
#include "saliency.hpp"
#include "text.hpp"
#include "trace.hpp"

namespace crisp {

struct LikelihoodQuery {
    std::string query;    // x: question plus instruction
    std::string context;  // candidate chain C (or C with the action output appended)
    std::string answer;   // y
};

struct LikelihoodResult {
    double logprob_sum = 0.0;  // nats, summed over answer tokens
    std::size_t n_answer_tokens = 0;
};

enum class EditKind { Rewrite, Fuse };

inline std::string to_string(EditKind k) { return k == EditKind::Rewrite ? "rewrite" : "fuse"; }

inline constexpr std::string_view kRewriteTemplateId = "rewrite-v1";
inline constexpr std::string_view kFuseTemplateId = "fuse-v1";
inline constexpr std::string_view kRefineTemplateId = "refine-v1";

struct EditRequest {
    EditKind kind = EditKind::Rewrite;
    std::vector<std::string> inputs;
    std::string template_id;

    static EditRequest rewrite(std::string step) {
        return {EditKind::Rewrite, {std::move(step)}, std::string(kRewriteTemplateId)};
    }
    static EditRequest fuse(std::string first, std::string second) {
        return {EditKind::Fuse, {std::move(first), std::move(second)}, std::string(kFuseTemplateId)};
    }
};

inline void check_arity(const EditRequest& req) {
    std::size_t want = req.kind == EditKind::Rewrite ? 1 : 2;
    if (req.inputs.size() != want) {
        fail(ErrorCode::InvalidArgument, to_string(req.kind) + " takes " + std::to_string(want) + " input(s)");
    }
}

struct OracleCapabilities {
    bool has_attention = false;
    bool has_likelihood = false;
    bool has_edit = false;
    bool has_embed = false;
    bool has_generate = false;
    std::string tokenizer_id;
    std::string eos_literal;

    bool can_compress() const { return has_likelihood && has_edit && has_embed; }
};

struct TokenizeResult {
    std::size_t count = 0;
    std::vector<CharSpan> spans;  // may be empty when the backend reports counts only
};

struct GenerateRequest {
    std::string prompt;
    std::size_t max_tokens = 4096;
    double temperature = 0.6;
    double top_p = 0.95;
};

struct GenerateResult {
    std::string text;
    std::size_t token_count = 0;
};

class Oracle {
public:
    virtual ~Oracle() = default;

    virtual OracleCapabilities capabilities() const = 0;
    virtual LikelihoodResult score(const LikelihoodQuery& q) const = 0;
    virtual TokenizeResult tokenize(const std::string& text) const = 0;
    virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) const = 0;
    /// Throws EditRefused for empty or template-violating output.
    virtual std::string apply_edit(const EditRequest& req) const = 0;
    /// Reference-conditioned restoration of a compressed draft.
    virtual std::string refine(const std::string& query, const std::string& original,
                               const std::string& draft) const = 0;
    virtual GenerateResult generate(const GenerateRequest& req) const = 0;
    /// Attention row of the think_close query position over all earlier tokens.
    virtual AttentionDump attention(const ReasoningTrace& trace) const = 0;

    double answer_logprob(const LikelihoodQuery& q) const { return score(q).logprob_sum; }

    std::size_t token_count(const std::string& text) const { return tokenize(text).count; }

    /// Cosine similarity of the backend's embeddings, in [-1, 1].
    virtual double similarity(const std::string& a, const std::string& b) const {
        auto v = embed({a, b});
        if (v.size() != 2) fail(ErrorCode::BackendUnavailable, "embed returned wrong vector count");
        return cosine(v[0], v[1]);
    }

    static double cosine(const std::vector<double>& u, const std::vector<double>& v) {
        if (u.size() != v.size()) fail(ErrorCode::BackendUnavailable, "embedding dimensions differ");
        double dot = 0.0, nu = 0.0, nv = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) {
            dot += u[i] * v[i];
            nu += u[i] * u[i];
            nv += v[i] * v[i];
        }
        if (nu == 0.0 || nv == 0.0) return 0.0;
        return std::clamp(dot / std::sqrt(nu * nv), -1.0, 1.0);
    }
};

/// Sum of token counts of the given texts.
inline std::size_t total_tokens(const Oracle& oracle, const std::vector<std::string>& texts) {
    std::size_t n = 0;
    for (const auto& t : texts) n += oracle.token_count(t);
    return n;
}

/// Tokenizes trace.raw with the backend and fills each step's token span.
/// Returns the anchor (think_close) token position.
inline std::size_t fill_token_spans(ReasoningTrace& trace, const Oracle& oracle) {
    auto tok = oracle.tokenize(trace.raw);
    if (tok.spans.size() != tok.count) {
        fail(ErrorCode::BackendUnavailable, "backend tokenizer did not return character spans");
    }
    return assign_token_spans(trace, tok.spans);
}

/// Scoring prompt x: the question followed by the instruction.
inline std::string scoring_prompt(const ReasoningTrace& trace) {
    if (trace.instruction.empty()) return trace.query;
    return trace.query + "\n" + trace.instruction;
}

// ---------------------------------------------------------------------------
// Prompt templates for the generative operators and the refiner
// ---------------------------------------------------------------------------

struct ChatPrompt {
    std::string system;
    std::string user;
};

inline ChatPrompt render_rewrite_prompt(const std::string& step) {
    return {
        "You are an expert at condensing reasoning steps. Your task is to rewrite the given reasoning step "
        "to be more concise while preserving all essential information and logical flow.\n"
        "Rules:\n"
        "1. Keep all key facts, numbers, and logical connections.\n"
        "2. Remove redundant phrases and verbose expressions.\n"
        "3. Maintain the mathematical or logical correctness.\n"
        "4. Output ONLY the condensed step, no explanations.",
        "Compress this reasoning step as short as possible:\n"
        "<step> " + step + " </step>\n"
        "Compressed:",
    };
}

inline ChatPrompt render_fuse_prompt(const std::string& first, const std::string& second) {
    return {
        "You are an expert at merging reasoning steps. Your task is to combine two consecutive reasoning "
        "steps into a single, coherent step while preserving all essential information.\n"
        "Rules:\n"
        "1. Preserve all key facts, numbers, and calculations.\n"
        "2. Maintain logical flow and correctness.\n"
        "3. Remove redundant information that appears in both steps.\n"
        "4. The merged step should be shorter than the sum of both steps.\n"
        "5. Output ONLY the merged step, no explanations.",
        "Merge these two steps into one step as short as possible:\n"
        "Step 1: " + first + "\n"
        "Step 2: " + second + "\n"
        "Merged:",
    };
}

inline ChatPrompt render_refine_prompt(const std::string& query, const std::string& original,
                                       const std::string& draft) {
    return {
        "You are an expert mathematical editor. Your task is to refine a rough reasoning draft. Restore "
        "logical continuity and mathematical accuracy. Match the Original CoT's exact tone, formatting, "
        "and style.",
        "### Question\n" + query +
            "\n\n### Original CoT (ONLY for Reference)\n" + original +
            "\n\n### Rough Draft (To Refine)\n" + draft +
            "\n\n### Instruction\n"
            "Refine the Rough Draft to ensure mathematical coherence and logical flow.\n"
            "1. Fill in missing algebraic manipulations and arithmetic calculations.\n"
            "2. Match the style and formatting of the Original CoT.\n"
            "3. Output ONLY the refined reasoning text.\n"
            "4. Ensure the calculations lead correctly to the final answer.\n\n"
            "### Refined Rough Solution:",
    };
}

inline ChatPrompt render_edit_prompt(const EditRequest& req) {
    check_arity(req);
    return req.kind == EditKind::Rewrite ? render_rewrite_prompt(req.inputs[0])
                                         : render_fuse_prompt(req.inputs[0], req.inputs[1]);
}

}  // namespace crisp
