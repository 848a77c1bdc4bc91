#pragma once

/**
 * Grading and efficiency metrics.
 *
 *   Acc = 100 * correct / n
 *   Tok = mean generated tokens
 *   TE  = Acc / Tok * 100      (reported to two decimals)
 *
 * Answers are compared by normalized string equality first, then by exact
 * rational value for integers, decimals, a/b and \frac-style fractions.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "error.hpp"
#include "text.hpp"
#include "trace.hpp"

namespace crisp {

/// Exact fraction num/den with den > 0, not necessarily reduced.
struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;

    friend bool operator==(const Rational& a, const Rational& b) {
        return static_cast<__int128>(a.num) * b.den == static_cast<__int128>(b.num) * a.den;
    }
};

namespace detail {

inline std::optional<Rational> parse_decimal(std::string_view s) {
    if (s.empty()) return std::nullopt;
    bool neg = false;
    if (s.front() == '-' || s.front() == '+') {
        neg = s.front() == '-';
        s.remove_prefix(1);
    }
    // thousands separators, only in the canonical 1,234,567 shape
    std::string digits;
    auto dot = s.find('.');
    std::string_view int_part = s.substr(0, dot);
    if (int_part.find(',') != std::string_view::npos) {
        auto groups = split(int_part, ",");
        if (groups.front().empty() || groups.front().size() > 3) return std::nullopt;
        for (std::size_t i = 1; i < groups.size(); ++i) {
            if (groups[i].size() != 3) return std::nullopt;
        }
        for (const auto& g : groups) digits += g;
    } else {
        digits = std::string(int_part);
    }
    std::string frac = dot == std::string_view::npos ? std::string{} : std::string(s.substr(dot + 1));
    if (digits.empty() && frac.empty()) return std::nullopt;
    if (digits.size() + frac.size() > 18) return std::nullopt;
    for (char c : digits + frac) {
        if (c < '0' || c > '9') return std::nullopt;
    }
    std::int64_t num = 0, den = 1;
    for (char c : digits + frac) num = num * 10 + (c - '0');
    for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
    return Rational{neg ? -num : num, den};
}

inline std::optional<Rational> divide(const std::optional<Rational>& a, const std::optional<Rational>& b) {
    if (!a || !b || b->num == 0) return std::nullopt;
    __int128 num = static_cast<__int128>(a->num) * b->den;
    __int128 den = static_cast<__int128>(a->den) * b->num;
    if (den < 0) {
        num = -num;
        den = -den;
    }
    constexpr __int128 kMax = INT64_MAX;
    if (num > kMax || num < -kMax || den > kMax) return std::nullopt;
    return Rational{static_cast<std::int64_t>(num), static_cast<std::int64_t>(den)};
}

/// Splits "{A}{B}" into A and B, requiring the whole string to be consumed.
inline std::optional<std::pair<std::string, std::string>> two_groups(std::string_view s) {
    std::vector<std::string> groups;
    std::size_t i = 0;
    while (i < s.size() && groups.size() < 2) {
        if (s[i] != '{') return std::nullopt;
        int depth = 0;
        std::size_t j = i;
        for (; j < s.size(); ++j) {
            if (s[j] == '{') ++depth;
            else if (s[j] == '}' && --depth == 0) break;
        }
        if (j == s.size()) return std::nullopt;
        groups.emplace_back(s.substr(i + 1, j - i - 1));
        i = j + 1;
    }
    if (groups.size() != 2 || i != s.size()) return std::nullopt;
    return std::make_pair(groups[0], groups[1]);
}

}  // namespace detail

/// Exact value of a simple numeric answer, if it has one.
inline std::optional<Rational> parse_rational(std::string_view text) {
    std::string s;
    for (char c : normalize_answer(text)) {
        if (!is_space(c)) s.push_back(c);
    }
    bool neg = false;
    std::string_view v = s;
    if (!v.empty() && v.front() == '-' && v.find('\\') == 1) {
        neg = true;
        v.remove_prefix(1);
    }
    std::optional<Rational> r;
    for (std::string_view macro : {"\\dfrac", "\\tfrac", "\\frac"}) {
        if (v.substr(0, macro.size()) == macro) {
            if (auto g = detail::two_groups(v.substr(macro.size()))) {
                r = detail::divide(parse_rational(g->first), parse_rational(g->second));
            }
            if (!r) return std::nullopt;
            break;
        }
    }
    if (!r) {
        auto slash = v.find('/');
        if (slash != std::string_view::npos) {
            r = detail::divide(detail::parse_decimal(v.substr(0, slash)), detail::parse_decimal(v.substr(slash + 1)));
        } else {
            r = detail::parse_decimal(v);
        }
    }
    if (r && neg) r->num = -r->num;
    return r;
}

inline bool answers_equivalent(std::string_view predicted, std::string_view truth) {
    if (normalize_answer(predicted) == normalize_answer(truth)) return true;
    auto a = parse_rational(predicted);
    auto b = parse_rational(truth);
    return a && b && *a == *b;
}

struct EvalRecord {
    std::string id;
    std::string generated_text;
    std::string ground_truth;
    std::size_t token_count = 0;
    std::optional<ExtractedAnswer> extracted;
    bool correct = false;
    std::size_t n_steps = 0;
    bool truncated = false;
};

struct GradeOptions {
    std::string think_open{kDefaultThinkOpen};
    std::string think_close{kDefaultThinkClose};
    std::string delimiter{kDefaultDelimiter};
};

using TokenCounter = std::function<std::size_t(const std::string&)>;

/// Number of non-blank delimiter-separated steps in the think region.
inline std::size_t count_steps(std::string_view text, const GradeOptions& opts = {}) {
    auto layout = locate_think_region(text, opts.think_open, opts.think_close);
    std::size_t n = 0;
    for (const auto& frag : split(text.substr(layout.region_begin, layout.region_end - layout.region_begin), opts.delimiter)) {
        if (!is_blank(frag)) ++n;
    }
    return n;
}

inline EvalRecord grade(const std::string& id, const std::string& generated_text, const std::string& ground_truth,
                        const TokenCounter& tokens, const GradeOptions& opts = {}) {
    EvalRecord r;
    r.id = id;
    r.generated_text = generated_text;
    r.ground_truth = ground_truth;
    r.token_count = tokens(generated_text);
    r.truncated = generated_text.find(opts.think_close) == std::string::npos;
    r.extracted = try_extract_boxed_answer(generated_text);
    r.correct = r.extracted && answers_equivalent(r.extracted->raw, ground_truth);
    r.n_steps = count_steps(generated_text, opts);
    return r;
}

inline double round2(double x) { return std::round(x * 100.0) / 100.0; }

/// TE = acc / tokens * 100, unrounded.
inline double token_efficiency(double accuracy_percent, double mean_tokens) {
    if (mean_tokens <= 0.0) return 0.0;
    return accuracy_percent / mean_tokens * 100.0;
}

struct MetricReport {
    double accuracy = 0.0;  // percent
    double mean_tokens = 0.0;
    double token_efficiency = 0.0;  // rounded to 2 decimals
    std::size_t n = 0;
    std::optional<std::size_t> budget;
};

inline MetricReport report(const std::vector<EvalRecord>& records, std::optional<std::size_t> budget = std::nullopt) {
    MetricReport m;
    m.n = records.size();
    m.budget = budget;
    if (records.empty()) return m;
    double correct = 0.0, tokens = 0.0;
    for (const auto& r : records) {
        correct += r.correct ? 1.0 : 0.0;
        tokens += static_cast<double>(r.token_count);
    }
    m.accuracy = 100.0 * correct / static_cast<double>(m.n);
    m.mean_tokens = tokens / static_cast<double>(m.n);
    m.token_efficiency = round2(token_efficiency(m.accuracy, m.mean_tokens));
    return m;
}

inline json to_json(const EvalRecord& r) {
    json j{{"id", r.id},
           {"token_count", r.token_count},
           {"extracted", r.extracted ? json{{"raw", r.extracted->raw}, {"normalized", r.extracted->normalized}} : json(nullptr)},
           {"ground_truth", r.ground_truth},
           {"correct", r.correct},
           {"n_steps", r.n_steps},
           {"truncated", r.truncated}};
    return j;
}

inline json to_json(const MetricReport& m) {
    return json{{"n", m.n},
                {"accuracy", m.accuracy},
                {"mean_tokens", m.mean_tokens},
                {"token_efficiency", m.token_efficiency},
                {"budget", m.budget ? json(*m.budget) : json(nullptr)}};
}

/// Aligned plain-text table, one row per labelled report.
inline std::string format_report_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
    std::size_t width = 6;
    for (const auto& [label, m] : rows) width = std::max(width, label.size());
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-*s %6s %8s %10s %8s %8s\n", static_cast<int>(width), "Method", "n", "Acc.",
                  "Tok.", "TE.", "Budget");
    out << buf;
    for (const auto& [label, m] : rows) {
        std::string budget = m.budget ? std::to_string(*m.budget) : "-";
        std::snprintf(buf, sizeof buf, "%-*s %6zu %8.1f %10.0f %8.2f %8s\n", static_cast<int>(width), label.c_str(), m.n,
                      m.accuracy, m.mean_tokens, m.token_efficiency, budget.c_str());
        out << buf;
    }
    return out.str();
}

struct TrajectoryStats {
    std::map<std::size_t, std::size_t> histogram;  // n_steps -> count, correct records only
    double mean_steps_correct = 0.0;
    std::vector<std::pair<std::size_t, double>> cumulative;  // (k, accuracy with n_steps <= k)
    std::size_t n = 0;

    /// Cumulative accuracy at k steps (fraction of all records).
    double cumulative_at(std::size_t k) const {
        double acc = 0.0;
        for (const auto& [steps, value] : cumulative) {
            if (steps > k) break;
            acc = value;
        }
        return acc;
    }

    /// Smallest step count whose cumulative accuracy reaches `target`.
    std::optional<std::size_t> steps_to_reach(double target) const {
        for (const auto& [steps, value] : cumulative) {
            if (value >= target - 1e-12) return steps;
        }
        return std::nullopt;
    }
};

inline TrajectoryStats trajectory_stats(const std::vector<EvalRecord>& records) {
    TrajectoryStats s;
    s.n = records.size();
    if (records.empty()) return s;
    double total_steps = 0.0;
    std::size_t n_correct = 0;
    for (const auto& r : records) {
        if (!r.correct) continue;
        ++s.histogram[r.n_steps];
        total_steps += static_cast<double>(r.n_steps);
        ++n_correct;
    }
    if (n_correct) s.mean_steps_correct = total_steps / static_cast<double>(n_correct);
    std::size_t running = 0;
    for (const auto& [steps, count] : s.histogram) {
        running += count;
        s.cumulative.emplace_back(steps, static_cast<double>(running) / static_cast<double>(s.n));
    }
    return s;
}

inline json to_json(const TrajectoryStats& s) {
    json hist = json::array();
    for (const auto& [k, c] : s.histogram) hist.push_back(json::array({k, c}));
    json cum = json::array();
    for (const auto& [k, v] : s.cumulative) cum.push_back(json::array({k, v}));
    auto reach = s.steps_to_reach(0.80);
    return json{{"n", s.n},
                {"mean_steps_correct", s.mean_steps_correct},
                {"histogram", std::move(hist)},
                {"cumulative_accuracy", std::move(cum)},
                {"steps_to_reach_0.80", reach ? json(*reach) : json(nullptr)}};
}

}  // namespace crisp
