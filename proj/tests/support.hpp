#pragma once

// Shared helpers for the test suites: trace builders, a randomized synthetic
// suite with monotone saliency/likelihood coupling, and scratch directories.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "crisp/saliency.hpp"
#include "crisp/synthetic_oracle.hpp"
#include "crisp/trace.hpp"

namespace crisp::testing {

namespace fs = std::filesystem;

/// Builds raw text "<think>s1\n\ns2...</think>\n\nanswer" and segments it.
inline ReasoningTrace make_trace(const std::string& id, const std::string& query, const std::vector<std::string>& steps,
                                 const std::string& answer) {
    std::string raw = "<think>";
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (i) raw += "\n\n";
        raw += steps[i];
    }
    raw += "</think>\n\n" + answer;
    ReasoningTrace t = segment_chain(raw);
    t.id = id;
    t.query = query;
    t.instruction = std::string(kStandardInstruction);
    return t;
}

/// Same as make_trace, with token spans mapped through the oracle.
inline ReasoningTrace make_spanned_trace(const std::string& id, const std::string& query,
                                         const std::vector<std::string>& steps, const std::string& answer,
                                         const Oracle& oracle) {
    auto t = make_trace(id, query, steps, answer);
    fill_token_spans(t, oracle);
    return t;
}

/// One random instance whose steps each carry a distinct keyword. Every step
/// has the same word count, so a step's saliency is an increasing function of
/// its keyword's gain, and the gain is exactly its likelihood contribution.
struct CoupledInstance {
    SyntheticSpec spec;
    ReasoningTrace trace;
};

inline CoupledInstance coupled_instance(std::uint64_t seed, std::size_t min_steps = 3, std::size_t max_steps = 8) {
    std::mt19937_64 rng(seed);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53); };
    std::size_t L = min_steps + rng() % (max_steps - min_steps + 1);

    CoupledInstance inst;
    inst.spec.base_logprob = -uniform(5.0, 20.0);
    inst.spec.n_layers = 1 + rng() % 3;
    inst.spec.n_heads = 1 + rng() % 3;
    std::vector<std::string> steps;
    for (std::size_t i = 0; i < L; ++i) {
        std::string kw = "kw" + std::to_string(i) + "x" + std::to_string(seed % 1000);
        inst.spec.rules.push_back({kw, uniform(0.0, 3.0)});
        steps.push_back("filler " + kw + " filler");
    }
    SyntheticOracle oracle(inst.spec);
    inst.trace = make_spanned_trace("coupled-" + std::to_string(seed), "question " + std::to_string(seed), steps,
                                    "answer tokens here", oracle);
    return inst;
}

/// Random trace over a small vocabulary of keywords and stop words, with
/// occasional near-repeats of the previous step so every gating row fires.
struct SearchInstance {
    SyntheticSpec spec;
    ReasoningTrace trace;
    SaliencyProfile profile;
};

inline SearchInstance random_search_instance(std::uint64_t seed, std::size_t max_steps = 8) {
    std::mt19937_64 rng(seed);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53); };
    static const std::vector<std::string> kVocab{"sum",  "product", "total", "ratio", "value", "so",  "the",
                                                 "then", "we",      "get",   "check", "wait",  "hmm", "is"};
    SearchInstance inst;
    inst.spec.base_logprob = -uniform(5.0, 15.0);
    for (std::string kw : {"sum", "product", "total", "ratio", "value", "check"}) {
        inst.spec.rules.push_back({kw, uniform(-0.5, 2.0)});
    }
    // a stop word that carries signal: rewriting it away costs likelihood, so Keep can win
    inst.spec.rules.push_back({"then", uniform(0.5, 2.0)});
    std::size_t L = 1 + rng() % max_steps;
    std::vector<std::string> steps;
    for (std::size_t i = 0; i < L; ++i) {
        if (i > 0 && rng() % 4 == 0) {
            steps.push_back(steps.back() + " " + kVocab[rng() % kVocab.size()] + ".");
            continue;
        }
        std::string step;
        std::size_t n = 2 + rng() % 7;
        for (std::size_t w = 0; w < n; ++w) step += (w ? " " : "") + kVocab[rng() % kVocab.size()];
        steps.push_back(step + ".");
    }
    SyntheticOracle oracle(inst.spec);
    inst.trace = make_spanned_trace("search-" + std::to_string(seed), "q" + std::to_string(seed), steps,
                                    "\\boxed{" + std::to_string(seed % 97) + "}", oracle);
    inst.profile = make_profile(inst.trace, oracle.attention(inst.trace));
    return inst;
}

/// Synthetic backend whose individual operations can be overridden.
class ScriptedOracle : public SyntheticOracle {
public:
    using SyntheticOracle::SyntheticOracle;

    std::function<LikelihoodResult(const LikelihoodQuery&)> on_score;
    std::function<std::string(const EditRequest&)> on_edit;
    std::function<std::string(const std::string&, const std::string&, const std::string&)> on_refine;
    std::function<double(const std::string&, const std::string&)> on_similarity;

    LikelihoodResult score(const LikelihoodQuery& q) const override {
        return on_score ? on_score(q) : SyntheticOracle::score(q);
    }
    std::string apply_edit(const EditRequest& req) const override {
        return on_edit ? on_edit(req) : SyntheticOracle::apply_edit(req);
    }
    std::string refine(const std::string& q, const std::string& o, const std::string& d) const override {
        return on_refine ? on_refine(q, o, d) : SyntheticOracle::refine(q, o, d);
    }
    double similarity(const std::string& a, const std::string& b) const override {
        return on_similarity ? on_similarity(a, b) : SyntheticOracle::similarity(a, b);
    }
};

/// Fresh scratch directory under the system temp dir.
inline fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("crisp-test-" + name + "-" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

/// Naive quadruple loop: steps x tokens x layers x heads.
inline std::vector<double> brute_force_scores(const std::vector<std::pair<std::size_t, std::size_t>>& spans,
                                              const AttentionDump& d) {
    std::vector<double> out;
    for (const auto& [s, e] : spans) {
        double total = 0.0;
        for (std::size_t t = s; t < e; ++t) {
            for (std::size_t l = 0; l < d.n_layers; ++l) {
                for (std::size_t h = 0; h < d.n_heads; ++h) total += d.rows[l * d.n_heads + h][t];
            }
        }
        out.push_back(total / static_cast<double>(e - s));
    }
    return out;
}

/// Random dump and contiguous step spans covering a prefix of the tokens.
struct RandomSaliencyCase {
    ReasoningTrace trace;
    AttentionDump dump;
    std::vector<std::pair<std::size_t, std::size_t>> spans;
};

inline RandomSaliencyCase random_saliency_case(std::mt19937_64& rng, std::size_t max_layers = 4, std::size_t max_heads = 4,
                                               std::size_t max_tokens = 32, std::size_t max_steps = 6) {
    RandomSaliencyCase c;
    c.dump.n_layers = 1 + rng() % max_layers;
    c.dump.n_heads = 1 + rng() % max_heads;
    std::size_t n_steps = 1 + rng() % max_steps;
    std::size_t tokens = n_steps + rng() % (max_tokens - n_steps + 1);
    c.dump.anchor_position = tokens;
    c.dump.trace_id = "rand";
    for (std::size_t r = 0; r < c.dump.n_layers * c.dump.n_heads; ++r) {
        std::vector<double> row(tokens);
        double sum = 0.0;
        for (auto& w : row) {
            w = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            sum += w;
        }
        double mass = 0.5 + 0.5 * static_cast<double>(rng() >> 11) * 0x1.0p-53;
        for (auto& w : row) w *= mass / sum;
        c.dump.rows.push_back(std::move(row));
    }
    // random cut points, each step non-empty, possibly leaving a tail gap
    std::vector<std::size_t> cuts{0};
    std::size_t covered = n_steps + rng() % (tokens - n_steps + 1);
    std::vector<std::size_t> inner;
    for (std::size_t i = 1; i < covered; ++i) inner.push_back(i);
    std::shuffle(inner.begin(), inner.end(), rng);
    inner.resize(n_steps - 1);
    std::sort(inner.begin(), inner.end());
    cuts.insert(cuts.end(), inner.begin(), inner.end());
    cuts.push_back(covered);
    for (std::size_t i = 0; i < n_steps; ++i) {
        c.spans.emplace_back(cuts[i], cuts[i + 1]);
        c.trace.steps.push_back({i, "s" + std::to_string(i), TokenSpan{cuts[i], cuts[i + 1]}});
    }
    return c;
}

}  // namespace crisp::testing
