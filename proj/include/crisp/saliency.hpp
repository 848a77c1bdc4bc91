#pragma once

/**
 * Step saliency from the </think> attention row.
 *
 * For step r_i covering token span [s, e):
 *
 *     S_i = 1/(e - s) * sum_{t in [s,e)} sum_layers sum_heads A[layer][head][t]
 *
 * Thresholds are nearest-rank quantiles of the scores; the gating bands use
 * strict inequalities at both ends, so a score equal to a threshold sits in
 * the middle band.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "text.hpp"
#include "trace.hpp"

namespace crisp {

enum class AttentionLayout { PerHead, PerLayerMean };

inline std::string to_string(AttentionLayout l) {
    return l == AttentionLayout::PerHead ? "per_head" : "per_layer_mean";
}

inline AttentionLayout attention_layout_from_string(const std::string& s) {
    if (s == "per_head") return AttentionLayout::PerHead;
    if (s == "per_layer_mean") return AttentionLayout::PerLayerMean;
    fail(ErrorCode::SchemaViolation, "unknown attention layout \"" + s + "\"");
}

struct AttentionDump {
    std::string trace_id;
    AttentionLayout layout = AttentionLayout::PerHead;
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::size_t anchor_position = 0;
    // n_layers * n_heads rows, layer-major; each row has anchor_position weights.
    std::vector<std::vector<double>> rows;

    const std::vector<double>& row(std::size_t layer, std::size_t head) const {
        return rows.at(layer * n_heads + head);
    }

    bool operator==(const AttentionDump&) const = default;
};

inline constexpr double kRowSumTolerance = 1e-4;

/// Structural checks plus the softmax-slice property (weights >= 0, each row
/// sums to at most 1 + 1e-4). Throws SchemaViolation on the first breach.
inline void validate(const AttentionDump& d) {
    auto where = [&] { return "dump " + d.trace_id + ": "; };
    if (d.layout == AttentionLayout::PerLayerMean && d.n_heads != 1) {
        fail(ErrorCode::SchemaViolation, where() + "per_layer_mean requires n_heads == 1");
    }
    if (d.rows.size() != d.n_layers * d.n_heads) {
        fail(ErrorCode::SchemaViolation, where() + "expected " + std::to_string(d.n_layers * d.n_heads) + " rows");
    }
    for (std::size_t r = 0; r < d.rows.size(); ++r) {
        const auto& row = d.rows[r];
        if (row.size() != d.anchor_position) {
            fail(ErrorCode::SchemaViolation, where() + "row " + std::to_string(r) + " length != anchor_position");
        }
        double sum = 0.0;
        for (double w : row) {
            if (!(w >= 0.0) || !std::isfinite(w)) {
                fail(ErrorCode::SchemaViolation, where() + "negative or non-finite weight in row " + std::to_string(r));
            }
            sum += w;
        }
        if (sum > 1.0 + kRowSumTolerance) {
            fail(ErrorCode::SchemaViolation, where() + "row " + std::to_string(r) + " sums to " + std::to_string(sum));
        }
    }
}

inline AttentionDump scaled(AttentionDump d, double k) {
    for (auto& row : d.rows) {
        for (auto& w : row) w *= k;
    }
    return d;
}

struct SaliencyProfile {
    std::string trace_id;
    std::vector<double> scores;
    double tau_low = 0.0;
    double tau_high = 0.0;
    double low_fraction = 0.20;
    double high_fraction = 0.30;

    bool operator==(const SaliencyProfile&) const = default;
};

enum class SaliencyBand { Low, Middle, High };

inline SaliencyBand band_of(double score, double tau_low, double tau_high) {
    if (score < tau_low) return SaliencyBand::Low;
    if (score <= tau_high) return SaliencyBand::Middle;
    return SaliencyBand::High;
}

inline SaliencyBand band_of(double score, const SaliencyProfile& p) {
    return band_of(score, p.tau_low, p.tau_high);
}

/// Which aggregation the caller expects. PerHead rejects head-averaged dumps.
enum class ScoreSemantics { Any, PerHead };

inline std::vector<double> score_steps(const ReasoningTrace& trace, const AttentionDump& dump,
                                       ScoreSemantics semantics = ScoreSemantics::Any) {
    if (semantics == ScoreSemantics::PerHead && dump.layout == AttentionLayout::PerLayerMean) {
        fail(ErrorCode::LayoutMismatch, "per-head scores requested from a per_layer_mean dump");
    }
    if (dump.rows.size() != dump.n_layers * dump.n_heads) {
        fail(ErrorCode::SchemaViolation, "dump " + dump.trace_id + ": row count mismatch");
    }
    for (const auto& row : dump.rows) {
        if (row.size() != dump.anchor_position) {
            fail(ErrorCode::SchemaViolation, "dump " + dump.trace_id + ": row length != anchor_position");
        }
    }

    // Column sums over every (layer, head) once; each step then averages its span.
    std::vector<double> column(dump.anchor_position, 0.0);
    for (const auto& row : dump.rows) {
        for (std::size_t t = 0; t < row.size(); ++t) column[t] += row[t];
    }

    std::vector<double> scores;
    scores.reserve(trace.steps.size());
    for (const auto& step : trace.steps) {
        if (!step.token_span) {
            fail(ErrorCode::SpanOutOfRange, "step " + std::to_string(step.index) + " has no token span");
        }
        const auto span = *step.token_span;
        if (span.end <= span.start || span.end > dump.anchor_position) {
            fail(ErrorCode::SpanOutOfRange, "step " + std::to_string(step.index) + " span [" +
                                                std::to_string(span.start) + ", " + std::to_string(span.end) +
                                                ") outside [0, " + std::to_string(dump.anchor_position) + ")");
        }
        double total = 0.0;
        for (std::size_t t = span.start; t < span.end; ++t) total += column[t];
        scores.push_back(total / static_cast<double>(span.size()));
    }
    return scores;
}

/// 1-based nearest rank ceil(q * n), clamped into [1, n].
inline std::size_t nearest_rank(double q, std::size_t n) {
    // the epsilon keeps exact products such as 0.7 * 10 from rounding up
    auto r = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) - 1e-9));
    return std::clamp<std::size_t>(r, 1, n);
}

inline std::pair<double, double> derive_thresholds(const std::vector<double>& scores, double low_fraction = 0.20,
                                                   double high_fraction = 0.30) {
    if (scores.empty()) fail(ErrorCode::EmptyScores, "cannot derive thresholds from no scores");
    if (low_fraction < 0.0 || high_fraction < 0.0 || low_fraction > 1.0 || high_fraction > 1.0) {
        fail(ErrorCode::InvalidArgument, "quantile fractions must lie in [0, 1]");
    }
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    double tau_low = sorted[nearest_rank(low_fraction, sorted.size()) - 1];
    double tau_high = sorted[nearest_rank(1.0 - high_fraction, sorted.size()) - 1];
    if (tau_low > tau_high) tau_low = tau_high;
    return {tau_low, tau_high};
}

inline SaliencyProfile make_profile(const ReasoningTrace& trace, const AttentionDump& dump,
                                    double low_fraction = 0.20, double high_fraction = 0.30) {
    SaliencyProfile p;
    p.trace_id = trace.id;
    p.scores = score_steps(trace, dump);
    std::tie(p.tau_low, p.tau_high) = derive_thresholds(p.scores, low_fraction, high_fraction);
    p.low_fraction = low_fraction;
    p.high_fraction = high_fraction;
    return p;
}

/// Gini coefficient of the (non-negative) scores; 0 for a uniform profile.
inline double gini(const std::vector<double>& scores) {
    if (scores.empty()) return 0.0;
    std::vector<double> s = scores;
    std::sort(s.begin(), s.end());
    double total = std::accumulate(s.begin(), s.end(), 0.0);
    if (total <= 0.0) return 0.0;
    double weighted = 0.0;
    const double n = static_cast<double>(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) weighted += (2.0 * static_cast<double>(i + 1) - n - 1.0) * s[i];
    return weighted / (n * total);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline json to_json(const AttentionDump& d) {
    return json{{"trace_id", d.trace_id},
                {"layout", to_string(d.layout)},
                {"n_layers", d.n_layers},
                {"n_heads", d.n_heads},
                {"anchor_position", d.anchor_position},
                {"weights", d.rows}};
}

inline AttentionDump attention_dump_from_json(const json& j, std::size_t line_no = 0) {
    AttentionDump d;
    d.trace_id = require_field<std::string>(j, "trace_id", line_no);
    d.layout = attention_layout_from_string(require_field<std::string>(j, "layout", line_no));
    d.n_layers = require_field<std::size_t>(j, "n_layers", line_no);
    d.n_heads = require_field<std::size_t>(j, "n_heads", line_no);
    d.anchor_position = require_field<std::size_t>(j, "anchor_position", line_no);
    d.rows = require_field<std::vector<std::vector<double>>>(j, "weights", line_no);
    if (d.rows.size() != d.n_layers * d.n_heads) {
        fail(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + ": weights row count != n_layers * n_heads");
    }
    return d;
}

inline json to_json(const SaliencyProfile& p) {
    return json{{"trace_id", p.trace_id},
                {"scores", p.scores},
                {"tau_low", p.tau_low},
                {"tau_high", p.tau_high},
                {"quantile_spec", json::array({p.low_fraction, p.high_fraction})}};
}

inline SaliencyProfile saliency_profile_from_json(const json& j, std::size_t line_no = 0) {
    SaliencyProfile p;
    p.trace_id = require_field<std::string>(j, "trace_id", line_no);
    p.scores = require_field<std::vector<double>>(j, "scores", line_no);
    p.tau_low = require_field<double>(j, "tau_low", line_no);
    p.tau_high = require_field<double>(j, "tau_high", line_no);
    auto q = require_field<std::vector<double>>(j, "quantile_spec", line_no);
    if (q.size() != 2) fail(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + ": quantile_spec needs 2 values");
    p.low_fraction = q[0];
    p.high_fraction = q[1];
    if (p.tau_low > p.tau_high) fail(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + ": tau_low > tau_high");
    return p;
}

inline std::vector<AttentionDump> read_attention_dumps(const std::string& path) {
    std::vector<AttentionDump> out;
    for_each_jsonl(path, [&](const json& j, std::size_t line) { out.push_back(attention_dump_from_json(j, line)); });
    return out;
}

inline void write_attention_dumps(const std::vector<AttentionDump>& dumps, const std::string& path) {
    std::vector<json> records;
    for (const auto& d : dumps) records.push_back(to_json(d));
    write_jsonl(path, records);
}

// Binary dump container: "CRSPATT1", then per record a little-endian u32
// header length, the JSON header (every field except weights) and the
// weights as little-endian float32 in layer-major order.

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline bool get_u32(std::istream& in, std::uint32_t& v) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
    v = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    return true;
}

}  // namespace detail

inline constexpr char kBinaryDumpMagic[8] = {'C', 'R', 'S', 'P', 'A', 'T', 'T', '1'};

inline void write_attention_dumps_binary(const std::vector<AttentionDump>& dumps, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::SchemaViolation, "cannot write " + path);
    out.write(kBinaryDumpMagic, sizeof kBinaryDumpMagic);
    for (const auto& d : dumps) {
        json header = to_json(d);
        header.erase("weights");
        std::string h = header.dump();
        detail::put_u32(out, static_cast<std::uint32_t>(h.size()));
        out.write(h.data(), static_cast<std::streamsize>(h.size()));
        for (const auto& row : d.rows) {
            for (double w : row) {
                float f = static_cast<float>(w);
                std::uint32_t bits;
                std::memcpy(&bits, &f, 4);
                detail::put_u32(out, bits);
            }
        }
    }
}

inline std::vector<AttentionDump> read_attention_dumps_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::SchemaViolation, "cannot open " + path);
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kBinaryDumpMagic, 8) != 0) {
        fail(ErrorCode::SchemaViolation, path + ": not a binary attention dump");
    }
    std::vector<AttentionDump> out;
    std::uint32_t len = 0;
    while (detail::get_u32(in, len)) {
        std::string h(len, '\0');
        if (!in.read(h.data(), len)) fail(ErrorCode::SchemaViolation, path + ": truncated header");
        json header = json::parse(h, nullptr, false);
        if (header.is_discarded()) fail(ErrorCode::SchemaViolation, path + ": bad header json");
        header["weights"] = json::array();
        AttentionDump d;
        d.trace_id = require_field<std::string>(header, "trace_id", out.size() + 1);
        d.layout = attention_layout_from_string(require_field<std::string>(header, "layout", out.size() + 1));
        d.n_layers = require_field<std::size_t>(header, "n_layers", out.size() + 1);
        d.n_heads = require_field<std::size_t>(header, "n_heads", out.size() + 1);
        d.anchor_position = require_field<std::size_t>(header, "anchor_position", out.size() + 1);
        d.rows.assign(d.n_layers * d.n_heads, std::vector<double>(d.anchor_position));
        for (auto& row : d.rows) {
            for (auto& w : row) {
                std::uint32_t bits;
                if (!detail::get_u32(in, bits)) fail(ErrorCode::SchemaViolation, path + ": truncated weights");
                float f;
                std::memcpy(&f, &bits, 4);
                w = f;
            }
        }
        out.push_back(std::move(d));
    }
    return out;
}

inline std::vector<SaliencyProfile> read_profiles(const std::string& path) {
    std::vector<SaliencyProfile> out;
    for_each_jsonl(path, [&](const json& j, std::size_t line) { out.push_back(saliency_profile_from_json(j, line)); });
    return out;
}

inline void write_profiles(const std::vector<SaliencyProfile>& profiles, const std::string& path) {
    std::vector<json> records;
    for (const auto& p : profiles) records.push_back(to_json(p));
    write_jsonl(path, records);
}

}  // namespace crisp
