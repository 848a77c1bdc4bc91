#pragma once

/**
 * Reasoning traces: the data model every stage consumes.
 *
 * A generation looks like
 *
 *     [<think>] step_1 \n\n step_2 \n\n ... step_L </think> answer
 *
 * segment_chain() splits the think region on a configurable delimiter,
 * extract_boxed_answer() pulls the final \boxed{...} group, and
 * read_traces()/write_traces() move traces through line-delimited JSON.
 */

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "error.hpp"
#include "text.hpp"

namespace crisp {

inline constexpr std::string_view kDefaultThinkOpen = "<think>";
inline constexpr std::string_view kDefaultThinkClose = "</think>";
inline constexpr std::string_view kDefaultDelimiter = "\n\n";
inline constexpr std::string_view kStandardInstruction =
    "Please reason step by step, and put your final answer within \\boxed{}.";

/// Half-open token range [start, end) within the full generation.
struct TokenSpan {
    std::size_t start = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - start; }
    bool operator==(const TokenSpan&) const = default;
};

struct Step {
    std::size_t index = 0;
    std::string text;
    std::optional<TokenSpan> token_span;
    bool operator==(const Step&) const = default;
};

struct ReasoningTrace {
    std::string id;
    std::string query;
    std::string instruction;
    std::string think_open{kDefaultThinkOpen};
    std::string think_close{kDefaultThinkClose};
    std::vector<Step> steps;
    std::string answer;
    std::string raw;
    // Set when the generation ended before think_close (budget cut). Such
    // traces can be graded but never compressed.
    bool truncated = false;

    bool operator==(const ReasoningTrace&) const = default;

    std::vector<std::string> step_texts() const {
        std::vector<std::string> out;
        out.reserve(steps.size());
        for (const auto& s : steps) out.push_back(s.text);
        return out;
    }

    bool has_token_spans() const {
        for (const auto& s : steps) {
            if (!s.token_span) return false;
        }
        return !steps.empty();
    }
};

struct SegmentOptions {
    std::string think_open{kDefaultThinkOpen};
    std::string think_close{kDefaultThinkClose};
    std::string delimiter{kDefaultDelimiter};
    bool allow_truncated = false;
};

/// Character range of the think region inside `raw`, plus the offset of
/// think_close (npos when absent).
struct ThinkLayout {
    std::size_t region_begin = 0;
    std::size_t region_end = 0;
    std::size_t close_pos = std::string::npos;
};

inline ThinkLayout locate_think_region(std::string_view raw, std::string_view think_open,
                                       std::string_view think_close) {
    ThinkLayout layout;
    std::size_t close = think_close.empty() ? std::string_view::npos : raw.find(think_close);
    std::size_t open = think_open.empty() ? std::string_view::npos : raw.find(think_open);
    if (open != std::string_view::npos && (close == std::string_view::npos || open < close)) {
        layout.region_begin = open + think_open.size();
    }
    layout.close_pos = close;
    layout.region_end = close == std::string_view::npos ? raw.size() : close;
    return layout;
}

/// Splits a raw generation into steps. Empty and whitespace-only fragments
/// are dropped; the answer is everything after think_close.
inline ReasoningTrace segment_chain(std::string_view raw_generation, const SegmentOptions& opts = {}) {
    if (opts.delimiter.empty()) fail(ErrorCode::InvalidArgument, "empty step delimiter");
    std::size_t closes = count_occurrences(raw_generation, opts.think_close);
    if (closes > 1) {
        fail(ErrorCode::MultipleThinkClose, "think_close appears " + std::to_string(closes) + " times");
    }
    ThinkLayout layout = locate_think_region(raw_generation, opts.think_open, opts.think_close);

    ReasoningTrace trace;
    trace.think_open = opts.think_open;
    trace.think_close = opts.think_close;
    trace.raw = std::string(raw_generation);
    if (layout.close_pos == std::string::npos) {
        if (!opts.allow_truncated) fail(ErrorCode::MissingThinkClose, "no " + opts.think_close + " in generation");
        trace.truncated = true;
    } else {
        trace.answer = std::string(raw_generation.substr(layout.close_pos + opts.think_close.size()));
    }

    auto region = raw_generation.substr(layout.region_begin, layout.region_end - layout.region_begin);
    for (auto& frag : split(region, opts.delimiter)) {
        if (is_blank(frag)) continue;
        trace.steps.push_back({trace.steps.size(), std::move(frag), std::nullopt});
    }
    if (trace.steps.empty()) fail(ErrorCode::EmptyChain, "think region has no non-empty step");
    return trace;
}

/// The verbatim think region of a trace, taken from raw.
inline std::string think_region(const ReasoningTrace& trace) {
    auto layout = locate_think_region(trace.raw, trace.think_open, trace.think_close);
    return trace.raw.substr(layout.region_begin, layout.region_end - layout.region_begin);
}

/// Character spans of each step within raw, found by scanning forward.
inline std::vector<CharSpan> step_char_spans(const ReasoningTrace& trace) {
    auto layout = locate_think_region(trace.raw, trace.think_open, trace.think_close);
    std::vector<CharSpan> spans;
    std::size_t cursor = layout.region_begin;
    for (const auto& step : trace.steps) {
        std::size_t at = trace.raw.find(step.text, cursor);
        if (at == std::string::npos || at + step.text.size() > layout.region_end) {
            fail(ErrorCode::SchemaViolation,
                 "trace " + trace.id + ": step " + std::to_string(step.index) + " not found in raw text");
        }
        spans.push_back({at, at + step.text.size()});
        cursor = at + step.text.size();
    }
    return spans;
}

/// Fills every step's token_span from a tokenization of `raw` given as
/// per-token character spans. Returns the anchor position: the index of the
/// first token starting at or after think_close.
inline std::size_t assign_token_spans(ReasoningTrace& trace, const std::vector<CharSpan>& tokens) {
    auto layout = locate_think_region(trace.raw, trace.think_open, trace.think_close);
    if (layout.close_pos == std::string::npos) {
        fail(ErrorCode::MissingThinkClose, "trace " + trace.id + " has no think_close");
    }
    std::size_t anchor = tokens.size();
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (tokens[t].begin >= layout.close_pos) {
            anchor = t;
            break;
        }
    }
    if (anchor == tokens.size()) {
        fail(ErrorCode::SpanOutOfRange, "trace " + trace.id + ": tokenization does not reach think_close");
    }
    auto char_spans = step_char_spans(trace);
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        const auto& cs = char_spans[i];
        std::optional<std::size_t> first, last;
        for (std::size_t t = 0; t < anchor; ++t) {
            if (tokens[t].begin < cs.end && tokens[t].end > cs.begin) {
                if (!first) first = t;
                last = t;
            }
        }
        if (!first) {
            fail(ErrorCode::SpanOutOfRange,
                 "trace " + trace.id + ": step " + std::to_string(i) + " covers no token");
        }
        trace.steps[i].token_span = TokenSpan{*first, *last + 1};
    }
    return anchor;
}

// ---------------------------------------------------------------------------
// Boxed answers
// ---------------------------------------------------------------------------

struct ExtractedAnswer {
    std::string raw;
    std::string normalized;
    bool operator==(const ExtractedAnswer&) const = default;
};

namespace detail {

/// If `s` is exactly `\macro{body}` for one of the formatting macros, returns body.
inline std::optional<std::string> strip_outer_macro(std::string_view s) {
    static constexpr std::string_view kMacros[] = {
        "\\boxed", "\\text", "\\textbf", "\\mathrm", "\\mathbf", "\\mbox", "\\displaystyle"};
    for (auto macro : kMacros) {
        if (s.size() < macro.size() + 2 || s.substr(0, macro.size()) != macro) continue;
        std::size_t open = macro.size();
        if (s[open] != '{' || s.back() != '}') continue;
        // the group opened at `open` must close at the final character
        int depth = 0;
        std::size_t close = std::string_view::npos;
        for (std::size_t i = open; i < s.size(); ++i) {
            if (s[i] == '{') ++depth;
            if (s[i] == '}' && --depth == 0) {
                close = i;
                break;
            }
        }
        if (close == s.size() - 1) return std::string(s.substr(open + 1, close - open - 1));
    }
    return std::nullopt;
}

}  // namespace detail

/// Canonical answer form: whitespace collapsed, surrounding `$` and outer
/// formatting macros removed. Applied to a fixed point, so idempotent.
inline std::string normalize_answer(std::string_view s) {
    std::string cur(s);
    while (true) {
        std::string next = collapse_whitespace(cur);
        if (next.size() >= 2 && next.front() == '$' && next.back() == '$') {
            next = next.substr(1, next.size() - 2);
        }
        if (auto inner = detail::strip_outer_macro(next)) next = *inner;
        next = collapse_whitespace(next);
        if (next == cur) return cur;
        cur = std::move(next);
    }
}

/// Content of the last balanced `\boxed{...}` group. Groups nested inside an
/// earlier group do not count as "later": the outermost group wins.
inline ExtractedAnswer extract_boxed_answer(std::string_view text) {
    constexpr std::string_view kMarker = "\\boxed{";
    std::optional<std::pair<std::size_t, std::size_t>> best;  // content [b, e)
    std::size_t pos = text.find(kMarker);
    while (pos != std::string_view::npos) {
        std::size_t open = pos + kMarker.size() - 1;
        int depth = 0;
        std::size_t close = std::string_view::npos;
        for (std::size_t i = open; i < text.size(); ++i) {
            if (text[i] == '{') ++depth;
            else if (text[i] == '}' && --depth == 0) {
                close = i;
                break;
            }
        }
        if (close == std::string_view::npos) {
            pos = text.find(kMarker, pos + 1);
            continue;
        }
        best = {open + 1, close};
        pos = text.find(kMarker, close + 1);
    }
    if (!best) fail(ErrorCode::NoBoxedAnswer, "no balanced \\boxed{} group");
    std::string raw(text.substr(best->first, best->second - best->first));
    return {raw, normalize_answer(raw)};
}

inline std::optional<ExtractedAnswer> try_extract_boxed_answer(std::string_view text) {
    try {
        return extract_boxed_answer(text);
    } catch (const Error&) {
        return std::nullopt;
    }
}

/// Reference answer of a trace: the boxed group after think_close, else the
/// one in the final step.
inline std::optional<ExtractedAnswer> reference_answer(const ReasoningTrace& trace) {
    if (auto a = try_extract_boxed_answer(trace.answer)) return a;
    if (!trace.steps.empty()) return try_extract_boxed_answer(trace.steps.back().text);
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Trace files
// ---------------------------------------------------------------------------

inline json to_json(const ReasoningTrace& t) {
    json steps = json::array();
    for (const auto& s : t.steps) {
        json js{{"index", s.index}, {"text", s.text}};
        if (s.token_span) js["token_span"] = json::array({s.token_span->start, s.token_span->end});
        steps.push_back(std::move(js));
    }
    json j{{"id", t.id},
           {"query", t.query},
           {"instruction", t.instruction},
           {"raw", t.raw},
           {"steps", std::move(steps)},
           {"answer", t.answer}};
    if (t.think_open != kDefaultThinkOpen) j["think_open"] = t.think_open;
    if (t.think_close != kDefaultThinkClose) j["think_close"] = t.think_close;
    if (t.truncated) j["truncated"] = true;
    return j;
}

inline ReasoningTrace trace_from_json(const json& j, std::size_t line_no = 0) {
    if (!j.is_object()) fail(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + ": not an object");
    ReasoningTrace t;
    t.id = require_field<std::string>(j, "id", line_no);
    t.query = require_field<std::string>(j, "query", line_no);
    t.instruction = require_field<std::string>(j, "instruction", line_no);
    t.raw = require_field<std::string>(j, "raw", line_no);
    t.answer = require_field<std::string>(j, "answer", line_no);
    t.think_open = j.value("think_open", std::string(kDefaultThinkOpen));
    t.think_close = j.value("think_close", std::string(kDefaultThinkClose));
    t.truncated = j.value("truncated", false);
    auto steps = require_field<json>(j, "steps", line_no);
    if (!steps.is_array()) fail(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + ": steps must be an array");
    for (const auto& js : steps) {
        Step s;
        s.index = require_field<std::size_t>(js, "index", line_no);
        s.text = require_field<std::string>(js, "text", line_no);
        if (auto it = js.find("token_span"); it != js.end() && !it->is_null()) {
            if (!it->is_array() || it->size() != 2) {
                fail(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + ": token_span must be [start, end]");
            }
            s.token_span = TokenSpan{(*it)[0].get<std::size_t>(), (*it)[1].get<std::size_t>()};
            if (s.token_span->end <= s.token_span->start) {
                fail(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + ": empty token_span");
            }
        }
        if (s.index != t.steps.size()) {
            fail(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + ": step indices out of order");
        }
        t.steps.push_back(std::move(s));
    }
    return t;
}

inline std::vector<ReasoningTrace> read_traces(const std::string& path) {
    std::vector<ReasoningTrace> out;
    for_each_jsonl(path, [&](const json& j, std::size_t line) { out.push_back(trace_from_json(j, line)); });
    return out;
}

inline void write_traces(const std::vector<ReasoningTrace>& traces, const std::string& path) {
    std::vector<json> records;
    records.reserve(traces.size());
    for (const auto& t : traces) records.push_back(to_json(t));
    write_jsonl(path, records);
}

}  // namespace crisp
