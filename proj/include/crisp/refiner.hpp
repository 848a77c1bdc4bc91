#pragma once

// Reference-conditioned restoration of the searched skeleton. The refiner
// sees the question, the original chain and the skeleton; its output is
// accepted only if it carries the original boxed answer. One retry, then the
// skeleton itself is used.

#include <optional>
#include <string>
#include <vector>

#include "compressor.hpp"
#include "error.hpp"
#include "oracle.hpp"
#include "text.hpp"
#include "trace.hpp"

namespace crisp {

enum class RefineStatus { Refined, FallbackDraft, Rejected };

inline std::string to_string(RefineStatus s) {
    switch (s) {
        case RefineStatus::Refined: return "refined";
        case RefineStatus::FallbackDraft: return "fallback_draft";
        case RefineStatus::Rejected: return "rejected";
    }
    return "?";
}

inline RefineStatus refine_status_from_string(const std::string& s) {
    if (s == "refined") return RefineStatus::Refined;
    if (s == "fallback_draft") return RefineStatus::FallbackDraft;
    if (s == "rejected") return RefineStatus::Rejected;
    fail(ErrorCode::SchemaViolation, "unknown refinement status \"" + s + "\"");
}

struct RefinementChecks {
    bool has_boxed_answer = false;
    bool answer_matches_original = false;
    double length_ratio = 0.0;
    bool operator==(const RefinementChecks&) const = default;
};

struct RefinementOutcome {
    std::string trace_id;
    std::string refined_text;
    RefineStatus status = RefineStatus::Rejected;
    RefinementChecks checks;
    std::size_t attempts = 0;
    bool operator==(const RefinementOutcome&) const = default;
};

inline RefinementChecks check_refinement(const std::string& text, const std::optional<ExtractedAnswer>& reference,
                                         std::size_t original_tokens, const Oracle& oracle) {
    RefinementChecks c;
    auto got = try_extract_boxed_answer(text);
    c.has_boxed_answer = got.has_value();
    c.answer_matches_original = got && reference && got->normalized == reference->normalized;
    c.length_ratio = original_tokens == 0
                         ? 0.0
                         : static_cast<double>(oracle.token_count(text)) / static_cast<double>(original_tokens);
    return c;
}

inline RefinementOutcome refine_chain(const ReasoningTrace& trace, const CompressionResult& result, const Oracle& oracle,
                                      const std::string& delimiter = std::string(kDefaultDelimiter)) {
    if (result.trace_id != trace.id) {
        fail(ErrorCode::InvalidArgument, "compression result " + result.trace_id + " does not belong to " + trace.id);
    }
    const auto reference = reference_answer(trace);
    const std::string original = join(trace.step_texts(), delimiter);
    const std::string draft = join(result.compressed_steps, delimiter);
    const std::size_t original_tokens = result.original_tokens;

    RefinementOutcome out;
    out.trace_id = trace.id;
    for (int attempt = 0; attempt < 2; ++attempt) {
        ++out.attempts;
        std::string text;
        try {
            text = oracle.refine(trace.query, original, draft);
        } catch (const Error& e) {
            if (e.category() != ErrorCategory::Backend) throw;
            continue;
        }
        auto checks = check_refinement(text, reference, original_tokens, oracle);
        if (checks.has_boxed_answer && checks.answer_matches_original) {
            out.refined_text = std::move(text);
            out.status = RefineStatus::Refined;
            out.checks = checks;
            return out;
        }
    }

    out.refined_text = draft;
    out.checks = check_refinement(draft, reference, original_tokens, oracle);
    out.status = out.checks.has_boxed_answer ? RefineStatus::FallbackDraft : RefineStatus::Rejected;
    return out;
}

inline json to_json(const RefinementOutcome& o) {
    return json{{"trace_id", o.trace_id},
                {"status", to_string(o.status)},
                {"attempts", o.attempts},
                {"checks",
                 {{"has_boxed_answer", o.checks.has_boxed_answer},
                  {"answer_matches_original", o.checks.answer_matches_original},
                  {"length_ratio", o.checks.length_ratio}}},
                {"refined_text", o.refined_text}};
}

inline RefinementOutcome refinement_outcome_from_json(const json& j, std::size_t line_no = 0) {
    RefinementOutcome o;
    o.trace_id = require_field<std::string>(j, "trace_id", line_no);
    o.status = refine_status_from_string(require_field<std::string>(j, "status", line_no));
    o.attempts = j.value("attempts", std::size_t{0});
    auto c = require_field<json>(j, "checks", line_no);
    o.checks.has_boxed_answer = require_field<bool>(c, "has_boxed_answer", line_no);
    o.checks.answer_matches_original = require_field<bool>(c, "answer_matches_original", line_no);
    o.checks.length_ratio = require_field<double>(c, "length_ratio", line_no);
    o.refined_text = require_field<std::string>(j, "refined_text", line_no);
    return o;
}

inline std::vector<RefinementOutcome> read_refinement_report(const std::string& path) {
    std::vector<RefinementOutcome> out;
    for_each_jsonl(path, [&](const json& j, std::size_t line) { out.push_back(refinement_outcome_from_json(j, line)); });
    return out;
}

inline void write_refinement_report(const std::vector<RefinementOutcome>& outcomes, const std::string& path) {
    std::vector<json> records;
    for (const auto& o : outcomes) records.push_back(to_json(o));
    write_jsonl(path, records);
}

}  // namespace crisp
