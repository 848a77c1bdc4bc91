#pragma once

// Straight-line reference implementations used as test oracles. They are
// written from the definitions rather than from the library code paths.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "crisp/compressor.hpp"

namespace crisp::testing {

struct ReferenceDecision {
    ActionKind chosen = ActionKind::Keep;
    std::map<ActionKind, double> rewards;
    std::string output;
};

struct ReferenceRun {
    std::vector<std::string> chain;
    std::vector<ReferenceDecision> decisions;
};

/// Greedy search: every allowed candidate is materialized, scored against the
/// chain it would extend, and the best one is applied.
inline ReferenceRun reference_greedy(const ReasoningTrace& trace, const SaliencyProfile& profile,
                                     const SearchConfig& cfg, const Oracle& oracle) {
    const std::string query = trace.instruction.empty() ? trace.query : trace.query + "\n" + trace.instruction;
    auto lp = [&](const std::vector<std::string>& chain) {
        std::string ctx;
        for (std::size_t i = 0; i < chain.size(); ++i) ctx += (i ? cfg.delimiter : "") + chain[i];
        return oracle.score({query, ctx, trace.answer}).logprob_sum;
    };
    auto len = [&](const std::string& s) { return static_cast<double>(oracle.tokenize(s).count); };

    ReferenceRun run;
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        const std::string& step = trace.steps[i].text;
        const double s = profile.scores[i];
        std::vector<ActionKind> allowed;
        if (!run.chain.empty() && oracle.similarity(run.chain.back(), step) >= cfg.tau_sim) {
            allowed = {ActionKind::Fuse};
        } else if (s < profile.tau_low) {
            allowed = {ActionKind::Prune, ActionKind::Rewrite};
        } else if (s > profile.tau_high) {
            allowed = {ActionKind::Keep, ActionKind::Rewrite};
        } else {
            allowed = {ActionKind::Rewrite};
        }

        ReferenceDecision d;
        std::map<ActionKind, std::vector<std::string>> next_chain;
        std::map<ActionKind, std::string> output;
        for (auto a : allowed) {
            std::vector<std::string> base = run.chain;
            std::string out;
            if (a == ActionKind::Keep) {
                out = step;
            } else if (a == ActionKind::Rewrite) {
                try {
                    out = oracle.apply_edit(EditRequest::rewrite(step));
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::EditRefused) throw;
                    out = step;
                }
            } else if (a == ActionKind::Fuse) {
                try {
                    out = oracle.apply_edit(EditRequest::fuse(run.chain.back(), step));
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::EditRefused) throw;
                    out = run.chain.back() + " " + step;
                }
                base.pop_back();
            }
            std::vector<std::string> extended = base;
            if (!out.empty()) extended.push_back(out);
            d.rewards[a] = out.empty() ? 0.0 : lp(extended) - lp(base) - cfg.beta * len(out);
            next_chain[a] = extended;
            output[a] = out;
        }

        // highest reward; among equal rewards, the earliest in tie-break order
        std::vector<ActionKind> ranked = allowed;
        auto rank = [&](ActionKind a) {
            return std::find(cfg.tie_break_order.begin(), cfg.tie_break_order.end(), a) - cfg.tie_break_order.begin();
        };
        std::sort(ranked.begin(), ranked.end(), [&](ActionKind a, ActionKind b) {
            if (d.rewards[a] != d.rewards[b]) return d.rewards[a] > d.rewards[b];
            return rank(a) < rank(b);
        });
        d.chosen = ranked.front();
        d.output = output[d.chosen];
        run.chain = next_chain[d.chosen];
        run.decisions.push_back(std::move(d));
    }
    return run;
}

}  // namespace crisp::testing
