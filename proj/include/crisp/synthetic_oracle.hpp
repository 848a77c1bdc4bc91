#pragma once

/**
 * Deterministic rule-based backend.
 *
 *   answer_logprob(y | x, C) = base + sum of gains of the keywords present in C
 *                              (each keyword counted once)
 *   tokenizer                = whitespace words; think tags split out as own tokens
 *   similarity               = bag-of-words cosine over normalized words
 *   rewrite                  = drop stop-words
 *   fuse                     = first input, then every sentence of the second
 *                              input not already present
 *   refine                   = identity on the draft
 *   attention                = per-token mass (background + keyword gain), each
 *                              row normalized to `row_mass`
 *
 * Because a keyword's gain drives both its likelihood contribution and its
 * attention mass, saliency and likelihood are coupled monotonically when the
 * steps have equal length.
 */

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "error.hpp"
#include "oracle.hpp"
#include "text.hpp"
#include "trace.hpp"

namespace crisp {

struct KeywordRule {
    std::string keyword;
    double gain = 0.0;
};

struct SyntheticSpec {
    double base_logprob = -10.0;
    std::vector<KeywordRule> rules;
    std::vector<std::string> stop_words = default_stop_words();
    std::vector<std::string> special_tokens{std::string(kDefaultThinkOpen), std::string(kDefaultThinkClose)};
    // attention shape
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    AttentionLayout layout = AttentionLayout::PerHead;
    double background = 0.01;
    double row_mass = 0.9;
    // 0 = unlimited; otherwise score() throws ContextTooLong above this many words
    std::size_t max_context_tokens = 0;
    // any scored context containing this marker fails with BackendUnavailable
    std::string unavailable_marker;
    std::string eos_literal = "[EOS]";

    static std::vector<std::string> default_stop_words() {
        return {"a",    "an",   "the",  "so",    "i",     "to",   "of",    "and",  "or",   "is",
                "are",  "was",  "were", "be",    "it",    "this", "that",  "then", "well", "okay",
                "hmm",  "just", "let",  "me",    "we",    "um",   "uh",    "alright", "wait", "maybe",
                "really", "think", "I'm", "i'm", "let's", "actually", "basically", "now", "right"};
    }
};

inline json to_json(const SyntheticSpec& s) {
    json rules = json::array();
    for (const auto& r : s.rules) rules.push_back({{"keyword", r.keyword}, {"gain", r.gain}});
    return json{{"base_logprob", s.base_logprob},
                {"rules", std::move(rules)},
                {"stop_words", s.stop_words},
                {"special_tokens", s.special_tokens},
                {"n_layers", s.n_layers},
                {"n_heads", s.n_heads},
                {"layout", to_string(s.layout)},
                {"background", s.background},
                {"row_mass", s.row_mass},
                {"max_context_tokens", s.max_context_tokens},
                {"unavailable_marker", s.unavailable_marker},
                {"eos_literal", s.eos_literal}};
}

inline SyntheticSpec synthetic_spec_from_json(const json& j) {
    SyntheticSpec s;
    s.base_logprob = j.value("base_logprob", s.base_logprob);
    if (auto it = j.find("rules"); it != j.end()) {
        for (const auto& r : *it) s.rules.push_back({r.at("keyword").get<std::string>(), r.at("gain").get<double>()});
    }
    s.stop_words = j.value("stop_words", s.stop_words);
    s.special_tokens = j.value("special_tokens", s.special_tokens);
    s.n_layers = j.value("n_layers", s.n_layers);
    s.n_heads = j.value("n_heads", s.n_heads);
    s.layout = attention_layout_from_string(j.value("layout", to_string(s.layout)));
    s.background = j.value("background", s.background);
    s.row_mass = j.value("row_mass", s.row_mass);
    s.max_context_tokens = j.value("max_context_tokens", s.max_context_tokens);
    s.unavailable_marker = j.value("unavailable_marker", s.unavailable_marker);
    s.eos_literal = j.value("eos_literal", s.eos_literal);
    if (s.layout == AttentionLayout::PerLayerMean) s.n_heads = 1;
    return s;
}

/// Sentences of `text`: split after '.', '!' or '?' followed by whitespace,
/// and at newlines. Returned trimmed, blanks dropped.
inline std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    auto flush = [&](std::size_t end) {
        auto s = trim(text.substr(start, end - start));
        if (!s.empty()) out.emplace_back(s);
        start = end;
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (c == '\n') {
            flush(i + 1);
        } else if ((c == '.' || c == '!' || c == '?') && (i + 1 == text.size() || is_space(text[i + 1]))) {
            flush(i + 1);
        }
    }
    flush(text.size());
    return out;
}

class SyntheticOracle : public Oracle {
public:
    explicit SyntheticOracle(SyntheticSpec spec = {}) : spec_(std::move(spec)) {
        for (const auto& r : spec_.rules) gains_[normalize_word(r.keyword)] += r.gain;
        for (const auto& w : spec_.stop_words) stop_.insert(normalize_word(w));
    }

    const SyntheticSpec& spec() const { return spec_; }

    OracleCapabilities capabilities() const override {
        return {true, true, true, true, true, "synthetic-whitespace", spec_.eos_literal};
    }

    LikelihoodResult score(const LikelihoodQuery& q) const override {
        if (q.answer.empty()) fail(ErrorCode::InvalidArgument, "answer must be non-empty");
        if (!spec_.unavailable_marker.empty() && q.context.find(spec_.unavailable_marker) != std::string::npos) {
            fail(ErrorCode::BackendUnavailable, "synthetic backend refused context");
        }
        if (spec_.max_context_tokens > 0) {
            std::size_t n = word_spans(q.query).size() + word_spans(q.context).size() + word_spans(q.answer).size();
            if (n > spec_.max_context_tokens) fail(ErrorCode::ContextTooLong, std::to_string(n) + " tokens");
        }
        return {spec_.base_logprob + keyword_gain(q.context), std::max<std::size_t>(1, token_count(q.answer))};
    }

    /// Sum of the gains of distinct keywords present in `text`.
    double keyword_gain(std::string_view text) const {
        std::set<std::string> seen;
        double total = 0.0;
        for (const auto& w : words(text)) {
            auto norm = normalize_word(w);
            auto it = gains_.find(norm);
            if (it != gains_.end() && seen.insert(norm).second) total += it->second;
        }
        return total;
    }

    /// Gain of a single token (0 when it is no keyword).
    double token_gain(std::string_view token) const {
        auto it = gains_.find(normalize_word(token));
        return it == gains_.end() ? 0.0 : it->second;
    }

    TokenizeResult tokenize(const std::string& text) const override {
        TokenizeResult r;
        for (const auto& ws : word_spans(text)) {
            std::size_t pos = ws.begin;
            while (pos < ws.end) {
                // earliest special token inside the remaining word
                std::size_t hit = ws.end, hit_len = 0;
                for (const auto& sp : spec_.special_tokens) {
                    if (sp.empty()) continue;
                    std::size_t f = text.find(sp, pos);
                    if (f != std::string::npos && f + sp.size() <= ws.end && f < hit) {
                        hit = f;
                        hit_len = sp.size();
                    }
                }
                if (hit > pos) r.spans.push_back({pos, hit});
                if (hit == ws.end) break;
                r.spans.push_back({hit, hit + hit_len});
                pos = hit + hit_len;
            }
        }
        r.count = r.spans.size();
        return r;
    }

    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) const override {
        std::map<std::string, std::size_t> vocab;
        std::vector<std::vector<std::string>> bags;
        for (const auto& t : texts) {
            bags.push_back(normalized_words(t));
            for (const auto& w : bags.back()) vocab.emplace(w, 0);
        }
        std::size_t i = 0;
        for (auto& [w, idx] : vocab) idx = i++;
        std::vector<std::vector<double>> out;
        for (const auto& bag : bags) {
            std::vector<double> v(vocab.size(), 0.0);
            for (const auto& w : bag) v[vocab[w]] += 1.0;
            out.push_back(std::move(v));
        }
        return out;
    }

    double similarity(const std::string& a, const std::string& b) const override {
        auto v = embed({a, b});
        return cosine(v[0], v[1]);
    }

    std::string apply_edit(const EditRequest& req) const override {
        check_arity(req);
        std::string out = req.kind == EditKind::Rewrite ? drop_stop_words(req.inputs[0])
                                                        : merge_sentences(req.inputs[0], req.inputs[1]);
        if (is_blank(out)) fail(ErrorCode::EditRefused, "synthetic " + to_string(req.kind) + " produced no text");
        return out;
    }

    std::string refine(const std::string&, const std::string&, const std::string& draft) const override {
        if (is_blank(draft)) fail(ErrorCode::RefineRejected, "empty draft");
        return draft;
    }

    GenerateResult generate(const GenerateRequest& req) const override {
        std::string text = std::string(kDefaultThinkOpen) + "\n" + req.prompt + "\n" + std::string(kDefaultThinkClose);
        auto n = std::min(token_count(text), req.max_tokens);
        return {text, n};
    }

    AttentionDump attention(const ReasoningTrace& trace) const override {
        auto tok = tokenize(trace.raw);
        auto layout = locate_think_region(trace.raw, trace.think_open, trace.think_close);
        if (layout.close_pos == std::string::npos) fail(ErrorCode::MissingThinkClose, "trace " + trace.id);
        std::size_t anchor = tok.count;
        for (std::size_t t = 0; t < tok.count; ++t) {
            if (tok.spans[t].begin >= layout.close_pos) {
                anchor = t;
                break;
            }
        }
        std::vector<double> row(anchor);
        double total = 0.0;
        for (std::size_t t = 0; t < anchor; ++t) {
            auto sp = tok.spans[t];
            row[t] = spec_.background + std::max(0.0, token_gain(std::string_view(trace.raw).substr(sp.begin, sp.end - sp.begin)));
            total += row[t];
        }
        if (total > 0.0) {
            for (auto& w : row) w *= spec_.row_mass / total;
        }
        AttentionDump d;
        d.trace_id = trace.id;
        d.layout = spec_.layout;
        d.n_layers = spec_.n_layers;
        d.n_heads = spec_.layout == AttentionLayout::PerLayerMean ? 1 : spec_.n_heads;
        d.anchor_position = anchor;
        d.rows.assign(d.n_layers * d.n_heads, row);
        return d;
    }

    std::string drop_stop_words(std::string_view text) const {
        std::vector<std::string> kept;
        for (const auto& w : words(text)) {
            if (!stop_.contains(normalize_word(w))) kept.push_back(w);
        }
        return join(kept, " ");
    }

    static std::string merge_sentences(std::string_view first, std::string_view second) {
        std::string out(trim(first));
        std::unordered_set<std::string> seen;
        for (const auto& s : split_sentences(first)) seen.insert(collapse_whitespace(s));
        for (const auto& s : split_sentences(second)) {
            if (!seen.insert(collapse_whitespace(s)).second) continue;
            if (!out.empty()) out.push_back(' ');
            out += s;
        }
        return out;
    }

private:
    static std::vector<std::string> normalized_words(std::string_view text) {
        std::vector<std::string> out;
        for (const auto& w : words(text)) {
            auto n = normalize_word(w);
            if (!n.empty()) out.push_back(std::move(n));
        }
        return out;
    }

    SyntheticSpec spec_;
    std::unordered_map<std::string, double> gains_;
    std::unordered_set<std::string> stop_;
};

}  // namespace crisp
