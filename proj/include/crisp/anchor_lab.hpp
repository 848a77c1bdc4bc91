#pragma once

// Desk-scale anchor experiments: answer perplexity after removing steps
// chosen by saliency policy, and per-layer heatmap data from a dump.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "oracle.hpp"
#include "random.hpp"
#include "saliency.hpp"
#include "text.hpp"
#include "trace.hpp"

namespace crisp {

enum class PrunePolicy { Lowest, Highest, Random };

inline std::string to_string(PrunePolicy p) {
    switch (p) {
        case PrunePolicy::Lowest: return "lowest";
        case PrunePolicy::Highest: return "highest";
        case PrunePolicy::Random: return "random";
    }
    return "?";
}

inline PrunePolicy prune_policy_from_string(const std::string& s) {
    if (s == "lowest") return PrunePolicy::Lowest;
    if (s == "highest") return PrunePolicy::Highest;
    if (s == "random") return PrunePolicy::Random;
    fail(ErrorCode::InvalidArgument, "unknown prune policy \"" + s + "\"");
}

struct PruneExperimentRow {
    std::string trace_id;
    PrunePolicy policy = PrunePolicy::Lowest;
    std::size_t k_removed = 0;
    double fraction = 0.0;  // k / L
    double ppl = 1.0;
    std::optional<std::uint64_t> seed;
};

/// exp(-logprob / n) of the answer given query and chain.
inline double answer_ppl(const std::string& query, const std::string& chain_text, const std::string& answer,
                         const Oracle& oracle) {
    auto r = oracle.score({query, chain_text, answer});
    if (r.n_answer_tokens == 0) fail(ErrorCode::InvalidArgument, "answer has no tokens");
    return std::exp(-r.logprob_sum / static_cast<double>(r.n_answer_tokens));
}

/// Step indices in removal order for the policy. Ties go to the lower index.
inline std::vector<std::size_t> removal_order(const SaliencyProfile& profile, PrunePolicy policy, std::uint64_t seed) {
    std::vector<std::size_t> order(profile.scores.size());
    std::iota(order.begin(), order.end(), 0);
    const auto& s = profile.scores;
    switch (policy) {
        case PrunePolicy::Lowest:
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] < s[b]; });
            break;
        case PrunePolicy::Highest:
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
            break;
        case PrunePolicy::Random: {
            SeededRng rng(seed);
            rng.shuffle(order);
            break;
        }
    }
    return order;
}

/// Rows for k = 0..max_k. The removed sets are nested: step k+1 removes one more.
inline std::vector<PruneExperimentRow> prune_and_score(const ReasoningTrace& trace, const SaliencyProfile& profile,
                                                       PrunePolicy policy, std::size_t max_k, const Oracle& oracle,
                                                       std::uint64_t seed = 0,
                                                       const std::string& delimiter = std::string(kDefaultDelimiter)) {
    const std::size_t L = trace.steps.size();
    if (profile.scores.size() != L) {
        fail(ErrorCode::InvalidArgument, "profile for " + profile.trace_id + " has " + std::to_string(profile.scores.size()) +
                                             " scores but trace has " + std::to_string(L) + " steps");
    }
    if (max_k >= L) {
        fail(ErrorCode::KTooLarge, "k=" + std::to_string(max_k) + " must be below L=" + std::to_string(L));
    }
    const auto order = removal_order(profile, policy, seed);
    const std::string query = scoring_prompt(trace);

    std::vector<bool> removed(L, false);
    std::vector<PruneExperimentRow> rows;
    for (std::size_t k = 0; k <= max_k; ++k) {
        if (k > 0) removed[order[k - 1]] = true;
        std::vector<std::string> kept;
        for (std::size_t i = 0; i < L; ++i) {
            if (!removed[i]) kept.push_back(trace.steps[i].text);
        }
        PruneExperimentRow row;
        row.trace_id = trace.id;
        row.policy = policy;
        row.k_removed = k;
        row.fraction = static_cast<double>(k) / static_cast<double>(L);
        row.ppl = answer_ppl(query, join(kept, delimiter), trace.answer, oracle);
        if (policy == PrunePolicy::Random) row.seed = seed;
        rows.push_back(row);
    }
    return rows;
}

struct RandomPolicySummary {
    std::size_t k_removed = 0;
    double mean_ppl = 0.0;
    double stddev_ppl = 0.0;  // population
    double min_ppl = 0.0;
    double max_ppl = 0.0;
    std::size_t n_seeds = 0;
};

/// Random-policy curve aggregated over seeds [first_seed, first_seed + n_seeds).
inline std::vector<RandomPolicySummary> random_policy_summary(const ReasoningTrace& trace, const SaliencyProfile& profile,
                                                              std::size_t max_k, const Oracle& oracle,
                                                              std::uint64_t first_seed, std::size_t n_seeds,
                                                              const std::string& delimiter = std::string(kDefaultDelimiter)) {
    if (n_seeds == 0) fail(ErrorCode::InvalidArgument, "need at least one seed");
    std::vector<std::vector<double>> by_k(max_k + 1);
    for (std::size_t s = 0; s < n_seeds; ++s) {
        for (const auto& row : prune_and_score(trace, profile, PrunePolicy::Random, max_k, oracle, first_seed + s, delimiter)) {
            by_k[row.k_removed].push_back(row.ppl);
        }
    }
    std::vector<RandomPolicySummary> out;
    for (std::size_t k = 0; k <= max_k; ++k) {
        const auto& v = by_k[k];
        RandomPolicySummary r;
        r.k_removed = k;
        r.n_seeds = v.size();
        r.mean_ppl = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - r.mean_ppl) * (x - r.mean_ppl);
        r.stddev_ppl = std::sqrt(ss / static_cast<double>(v.size()));
        auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        r.min_ppl = *lo;
        r.max_ppl = *hi;
        out.push_back(r);
    }
    return out;
}

inline json to_json(const PruneExperimentRow& r) {
    return json{{"trace_id", r.trace_id},
                {"policy", to_string(r.policy)},
                {"k", r.k_removed},
                {"fraction", r.fraction},
                {"ppl", r.ppl},
                {"seed", r.seed ? json(*r.seed) : json(nullptr)}};
}

inline json to_json(const RandomPolicySummary& r) {
    return json{{"k", r.k_removed},     {"mean_ppl", r.mean_ppl}, {"stddev_ppl", r.stddev_ppl},
                {"min_ppl", r.min_ppl}, {"max_ppl", r.max_ppl},   {"n_seeds", r.n_seeds}};
}

/// Tab-separated plot data with a header line.
inline std::string prune_rows_tsv(const std::vector<PruneExperimentRow>& rows) {
    std::string out = "trace_id\tpolicy\tk\tfraction\tppl\tseed\n";
    char buf[64];
    for (const auto& r : rows) {
        out += r.trace_id + "\t" + to_string(r.policy) + "\t" + std::to_string(r.k_removed) + "\t";
        std::snprintf(buf, sizeof buf, "%.6f\t%.9g\t", r.fraction, r.ppl);
        out += buf;
        out += r.seed ? std::to_string(*r.seed) : std::string("-");
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------

struct HeatmapLayer {
    std::size_t layer = 0;
    std::vector<double> values;  // head-averaged weights over [0, anchor_position)
};

struct HeatmapData {
    std::string trace_id;
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::size_t anchor_position = 0;
    std::vector<HeatmapLayer> layers;
};

/// Head-averaged rows for the selected layers (all layers if empty).
inline HeatmapData export_heatmap_data(const AttentionDump& dump, const std::vector<std::size_t>& layer_selection = {}) {
    validate(dump);
    HeatmapData out;
    out.trace_id = dump.trace_id;
    out.n_layers = dump.n_layers;
    out.n_heads = dump.n_heads;
    out.anchor_position = dump.anchor_position;

    std::vector<std::size_t> layers = layer_selection;
    if (layers.empty()) {
        layers.resize(dump.n_layers);
        std::iota(layers.begin(), layers.end(), 0);
    }
    for (std::size_t l : layers) {
        if (l >= dump.n_layers) {
            fail(ErrorCode::InvalidArgument, "layer " + std::to_string(l) + " out of range (n_layers=" +
                                                 std::to_string(dump.n_layers) + ")");
        }
        HeatmapLayer hl;
        hl.layer = l;
        if (dump.n_heads == 1) {
            hl.values = dump.row(l, 0);
        } else {
            hl.values.assign(dump.anchor_position, 0.0);
            for (std::size_t h = 0; h < dump.n_heads; ++h) {
                const auto& row = dump.row(l, h);
                for (std::size_t t = 0; t < row.size(); ++t) hl.values[t] += row[t];
            }
            for (double& v : hl.values) v /= static_cast<double>(dump.n_heads);
        }
        out.layers.push_back(std::move(hl));
    }
    return out;
}

inline json to_json(const HeatmapData& h) {
    json layers = json::array();
    for (const auto& l : h.layers) layers.push_back(json{{"layer", l.layer}, {"values", l.values}});
    return json{{"trace_id", h.trace_id},
                {"n_layers", h.n_layers},
                {"n_heads", h.n_heads},
                {"anchor_position", h.anchor_position},
                {"layers", std::move(layers)}};
}

}  // namespace crisp
