#pragma once

/**
 * Gated greedy search over the four atomic operators.
 *
 * Steps are consumed in order. For each step the allowed set is decided by
 * gate(), every allowed candidate is materialized and scored with
 *
 *     R(a) = log P(y | x, C + a(r)) - log P(y | x, C) - beta * Len(a(r))
 *
 * and the argmax (ties resolved by SearchConfig::tie_break_order) updates the
 * chain C. Fuse replaces the last chain segment with the merged text, so its
 * reward is measured against C without that segment.
 */

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "oracle.hpp"
#include "saliency.hpp"
#include "text.hpp"
#include "trace.hpp"

namespace crisp {

enum class ActionKind { Keep, Prune, Rewrite, Fuse };

inline constexpr std::array<ActionKind, 4> kAllActions{ActionKind::Keep, ActionKind::Prune, ActionKind::Rewrite,
                                                       ActionKind::Fuse};

inline std::string to_string(ActionKind a) {
    switch (a) {
        case ActionKind::Keep: return "Keep";
        case ActionKind::Prune: return "Prune";
        case ActionKind::Rewrite: return "Rewrite";
        case ActionKind::Fuse: return "Fuse";
    }
    return "?";
}

inline ActionKind action_from_string(const std::string& s) {
    for (auto a : kAllActions) {
        if (to_string(a) == s) return a;
    }
    fail(ErrorCode::SchemaViolation, "unknown action \"" + s + "\"");
}

/// Small ordered set of actions, kept in declaration order.
using ActionSet = std::vector<ActionKind>;

inline bool contains(const ActionSet& set, ActionKind a) {
    return std::find(set.begin(), set.end(), a) != set.end();
}

enum class FailPolicy { SkipTrace, FailFast };

struct SearchConfig {
    double beta = 0.005;
    double tau_sim = 0.7;
    double low_fraction = 0.20;
    double high_fraction = 0.30;
    std::vector<ActionKind> tie_break_order{ActionKind::Prune, ActionKind::Fuse, ActionKind::Rewrite,
                                            ActionKind::Keep};
    std::string delimiter{kDefaultDelimiter};
    FailPolicy fail_policy = FailPolicy::SkipTrace;

    void validate() const {
        if (!(beta >= 0.0)) fail(ErrorCode::ConfigError, "beta must be >= 0");
        if (!(tau_sim >= 0.0 && tau_sim <= 1.0)) fail(ErrorCode::ConfigError, "tau_sim must lie in [0, 1]");
        for (auto a : kAllActions) {
            if (std::count(tie_break_order.begin(), tie_break_order.end(), a) != 1) {
                fail(ErrorCode::ConfigError, "tie_break_order must list every action exactly once");
            }
        }
    }
};

/// Allowed actions for one step; exactly one row of the gating table fires.
inline ActionSet gate(double step_score, double tau_low, double tau_high, bool chain_empty, double similarity,
                      double tau_sim) {
    if (!chain_empty && similarity >= tau_sim) return {ActionKind::Fuse};
    switch (band_of(step_score, tau_low, tau_high)) {
        case SaliencyBand::Low: return {ActionKind::Prune, ActionKind::Rewrite};
        case SaliencyBand::Middle: return {ActionKind::Rewrite};
        case SaliencyBand::High: return {ActionKind::Keep, ActionKind::Rewrite};
    }
    return {};
}

/// Gate with lazy similarity: sim is only evaluated when a chain tail exists.
template <typename SimilarityFn>
ActionSet gate(double step_score, const SaliencyProfile& profile, const std::optional<std::string>& chain_tail,
               const std::string& step_text, const SearchConfig& cfg, SimilarityFn&& sim) {
    double s = chain_tail ? sim(*chain_tail, step_text) : 0.0;
    return gate(step_score, profile.tau_low, profile.tau_high, !chain_tail.has_value(), s, cfg.tau_sim);
}

/// R = logP(y | x, chain + output) - logP(y | x, chain) - beta * Len(output).
/// An empty output leaves the chain unchanged, so its reward is exactly 0.
inline double reward(const std::string& action_output, const std::string& query, const std::vector<std::string>& chain,
                     const std::string& answer, const SearchConfig& cfg, const Oracle& oracle) {
    if (action_output.empty()) return 0.0;
    std::vector<std::string> extended = chain;
    extended.push_back(action_output);
    double with = oracle.answer_logprob({query, join(extended, cfg.delimiter), answer});
    double without = oracle.answer_logprob({query, join(chain, cfg.delimiter), answer});
    return with - without - cfg.beta * static_cast<double>(oracle.token_count(action_output));
}

struct ActionRecord {
    std::size_t step_index = 0;
    double score = 0.0;
    std::optional<double> similarity;
    ActionSet allowed;
    ActionKind chosen = ActionKind::Keep;
    std::map<ActionKind, double> candidate_rewards;
    std::string output_text;
    std::size_t tokens_before = 0;
    std::size_t tokens_after = 0;

    bool operator==(const ActionRecord&) const = default;
};

struct CompressionResult {
    std::string trace_id;
    std::vector<std::string> compressed_steps;
    std::vector<ActionRecord> action_log;
    std::size_t original_tokens = 0;
    std::size_t compressed_tokens = 0;

    bool operator==(const CompressionResult&) const = default;
};

/// argmax over candidate rewards; earlier entries of `order` win ties.
inline ActionKind select_action(const std::map<ActionKind, double>& rewards, const std::vector<ActionKind>& order) {
    std::optional<ActionKind> best;
    for (auto a : order) {
        auto it = rewards.find(a);
        if (it == rewards.end()) continue;
        if (!best || it->second > rewards.at(*best)) best = a;
    }
    if (!best) fail(ErrorCode::InvalidArgument, "no candidate rewards to select from");
    return *best;
}

inline void check_compressible(const ReasoningTrace& trace, const SaliencyProfile& profile, const Oracle& oracle) {
    if (trace.truncated) fail(ErrorCode::MissingThinkClose, "trace " + trace.id + " is truncated");
    if (trace.steps.empty()) fail(ErrorCode::EmptyChain, "trace " + trace.id);
    if (profile.scores.size() != trace.steps.size()) {
        fail(ErrorCode::InvalidArgument, "trace " + trace.id + ": profile has " + std::to_string(profile.scores.size()) +
                                             " scores for " + std::to_string(trace.steps.size()) + " steps");
    }
    if (!oracle.capabilities().can_compress()) {
        fail(ErrorCode::MissingCapability, "backend lacks likelihood, edit or embedding support");
    }
}

inline CompressionResult compress(const ReasoningTrace& trace, const SaliencyProfile& profile, const SearchConfig& cfg,
                                  const Oracle& oracle) {
    check_compressible(trace, profile, oracle);
    const std::string query = scoring_prompt(trace);
    const std::string& answer = trace.answer;

    std::map<std::string, std::string> rewrite_memo;
    std::map<std::pair<std::string, std::string>, std::string> fuse_memo;
    auto rewrite = [&](const std::string& step) {
        auto it = rewrite_memo.find(step);
        if (it != rewrite_memo.end()) return it->second;
        std::string out;
        try {
            out = oracle.apply_edit(EditRequest::rewrite(step));
        } catch (const Error& e) {
            if (e.code() != ErrorCode::EditRefused) throw;
            out = step;
        }
        return rewrite_memo[step] = out;
    };
    auto fuse = [&](const std::string& tail, const std::string& step) {
        auto key = std::make_pair(tail, step);
        auto it = fuse_memo.find(key);
        if (it != fuse_memo.end()) return it->second;
        std::string out;
        try {
            out = oracle.apply_edit(EditRequest::fuse(tail, step));
        } catch (const Error& e) {
            if (e.code() != ErrorCode::EditRefused) throw;
            out = tail + " " + step;
        }
        return fuse_memo[key] = out;
    };

    CompressionResult result;
    result.trace_id = trace.id;
    result.original_tokens = total_tokens(oracle, trace.step_texts());

    std::vector<std::string> chain;
    std::size_t chain_tokens = 0;
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        const std::string& step = trace.steps[i].text;
        ActionRecord rec;
        rec.step_index = i;
        rec.score = profile.scores[i];
        rec.tokens_before = chain_tokens;

        std::optional<std::string> tail;
        if (!chain.empty()) tail = chain.back();
        rec.allowed = gate(rec.score, profile, tail, step, cfg, [&](const std::string& a, const std::string& b) {
            rec.similarity = oracle.similarity(a, b);
            return *rec.similarity;
        });

        std::map<ActionKind, std::string> outputs;
        for (auto a : rec.allowed) {
            switch (a) {
                case ActionKind::Keep: {
                    outputs[a] = step;
                    rec.candidate_rewards[a] = reward(step, query, chain, answer, cfg, oracle);
                    break;
                }
                case ActionKind::Prune: {
                    outputs[a] = "";
                    rec.candidate_rewards[a] = reward("", query, chain, answer, cfg, oracle);
                    break;
                }
                case ActionKind::Rewrite: {
                    outputs[a] = rewrite(step);
                    rec.candidate_rewards[a] = reward(outputs[a], query, chain, answer, cfg, oracle);
                    break;
                }
                case ActionKind::Fuse: {
                    outputs[a] = fuse(*tail, step);
                    std::vector<std::string> head(chain.begin(), chain.end() - 1);
                    rec.candidate_rewards[a] = reward(outputs[a], query, head, answer, cfg, oracle);
                    break;
                }
            }
        }

        rec.chosen = select_action(rec.candidate_rewards, cfg.tie_break_order);
        rec.output_text = outputs[rec.chosen];
        if (rec.chosen == ActionKind::Fuse) {
            chain_tokens -= oracle.token_count(chain.back());
            chain.back() = rec.output_text;
            chain_tokens += oracle.token_count(rec.output_text);
        } else if (!rec.output_text.empty()) {
            chain.push_back(rec.output_text);
            chain_tokens += oracle.token_count(rec.output_text);
        }
        rec.tokens_after = chain_tokens;
        result.action_log.push_back(std::move(rec));
    }

    result.compressed_steps = std::move(chain);
    result.compressed_tokens = chain_tokens;
    return result;
}

/// Rebuilds the compressed chain from the recorded outputs, validating the
/// log against the trace on the way.
inline std::vector<std::string> replay(const ReasoningTrace& trace, const std::vector<ActionRecord>& log) {
    auto bad = [](std::size_t i, const std::string& why) {
        fail(ErrorCode::ReplayError, "record " + std::to_string(i) + ": " + why);
    };
    if (log.size() != trace.steps.size()) {
        fail(ErrorCode::ReplayError, "log has " + std::to_string(log.size()) + " records for " +
                                         std::to_string(trace.steps.size()) + " steps");
    }
    std::vector<std::string> chain;
    for (std::size_t i = 0; i < log.size(); ++i) {
        const auto& rec = log[i];
        if (rec.step_index != i) bad(i, "step_index out of order");
        if (!contains(rec.allowed, rec.chosen)) bad(i, "chosen action " + to_string(rec.chosen) + " not allowed");
        if (rec.candidate_rewards.size() != rec.allowed.size()) bad(i, "candidate rewards do not match allowed set");
        for (auto a : rec.allowed) {
            if (!rec.candidate_rewards.contains(a)) bad(i, "missing reward for " + to_string(a));
        }
        switch (rec.chosen) {
            case ActionKind::Keep:
                if (rec.output_text != trace.steps[i].text) bad(i, "Keep output differs from the step");
                chain.push_back(rec.output_text);
                break;
            case ActionKind::Prune:
                if (!rec.output_text.empty()) bad(i, "Prune output must be empty");
                break;
            case ActionKind::Rewrite:
                if (!rec.output_text.empty()) chain.push_back(rec.output_text);
                break;
            case ActionKind::Fuse:
                if (chain.empty()) bad(i, "Fuse on an empty chain");
                chain.back() = rec.output_text;
                break;
        }
    }
    return chain;
}

// ---------------------------------------------------------------------------
// Compression report records
// ---------------------------------------------------------------------------

inline json to_json(const ActionRecord& r) {
    json allowed = json::array();
    for (auto a : r.allowed) allowed.push_back(to_string(a));
    json rewards = json::object();
    // keyed in allowed-set order for stable diffs
    for (auto a : r.allowed) rewards[to_string(a)] = r.candidate_rewards.at(a);
    json j{{"step_index", r.step_index},
           {"score", r.score},
           {"similarity", r.similarity ? json(*r.similarity) : json(nullptr)},
           {"allowed", std::move(allowed)},
           {"chosen", to_string(r.chosen)},
           {"candidate_rewards", std::move(rewards)},
           {"output_text", r.output_text},
           {"tokens_before", r.tokens_before},
           {"tokens_after", r.tokens_after}};
    return j;
}

inline ActionRecord action_record_from_json(const json& j, std::size_t line_no = 0) {
    ActionRecord r;
    r.step_index = require_field<std::size_t>(j, "step_index", line_no);
    r.score = require_field<double>(j, "score", line_no);
    if (auto it = j.find("similarity"); it != j.end() && !it->is_null()) r.similarity = it->get<double>();
    for (const auto& a : require_field<std::vector<std::string>>(j, "allowed", line_no)) {
        r.allowed.push_back(action_from_string(a));
    }
    r.chosen = action_from_string(require_field<std::string>(j, "chosen", line_no));
    const json rewards = require_field<json>(j, "candidate_rewards", line_no);
    for (const auto& [k, v] : rewards.items()) {
        r.candidate_rewards[action_from_string(k)] = v.get<double>();
    }
    r.output_text = require_field<std::string>(j, "output_text", line_no);
    r.tokens_before = require_field<std::size_t>(j, "tokens_before", line_no);
    r.tokens_after = require_field<std::size_t>(j, "tokens_after", line_no);
    return r;
}

inline json to_json(const CompressionResult& r) {
    json log = json::array();
    for (const auto& rec : r.action_log) log.push_back(to_json(rec));
    return json{{"trace_id", r.trace_id},
                {"original_tokens", r.original_tokens},
                {"compressed_tokens", r.compressed_tokens},
                {"compressed_steps", r.compressed_steps},
                {"action_log", std::move(log)}};
}

inline CompressionResult compression_result_from_json(const json& j, std::size_t line_no = 0) {
    CompressionResult r;
    r.trace_id = require_field<std::string>(j, "trace_id", line_no);
    r.original_tokens = require_field<std::size_t>(j, "original_tokens", line_no);
    r.compressed_tokens = require_field<std::size_t>(j, "compressed_tokens", line_no);
    r.compressed_steps = require_field<std::vector<std::string>>(j, "compressed_steps", line_no);
    for (const auto& rec : require_field<json>(j, "action_log", line_no)) {
        r.action_log.push_back(action_record_from_json(rec, line_no));
    }
    return r;
}

inline std::vector<CompressionResult> read_compression_report(const std::string& path) {
    std::vector<CompressionResult> out;
    for_each_jsonl(path, [&](const json& j, std::size_t line) { out.push_back(compression_result_from_json(j, line)); });
    return out;
}

inline void write_compression_report(const std::vector<CompressionResult>& results, const std::string& path) {
    std::vector<json> records;
    for (const auto& r : results) records.push_back(to_json(r));
    write_jsonl(path, records);
}

/// Operator mix of a batch of results: fraction of all decisions per action.
inline std::map<ActionKind, double> action_distribution(const std::vector<CompressionResult>& results) {
    std::map<ActionKind, double> counts;
    double total = 0.0;
    for (const auto& r : results) {
        for (const auto& rec : r.action_log) {
            counts[rec.chosen] += 1.0;
            total += 1.0;
        }
    }
    if (total > 0.0) {
        for (auto& [a, c] : counts) c /= total;
    }
    return counts;
}

}  // namespace crisp
