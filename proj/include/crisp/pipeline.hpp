#pragma once

/**
 * Pipeline wiring: configuration, a small in-order worker pool, one function
 * per stage and the run manifest.
 *
 * Stages consume and produce in-memory records; file I/O lives at the edges
 * (run_pipeline and the command-line tool), so every stage can be driven
 * directly from tests.
 */

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "anchor_lab.hpp"
#include "compressor.hpp"
#include "corpus.hpp"
#include "digest.hpp"
#include "error.hpp"
#include "metrics.hpp"
#include "oracle.hpp"
#include "refiner.hpp"
#include "saliency.hpp"
#include "synthetic_oracle.hpp"
#include "text.hpp"
#include "trace.hpp"
#include "wire.hpp"

namespace crisp {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct BackendConfig {
    enum class Kind { Synthetic, Adapter } kind = Kind::Synthetic;
    SyntheticSpec synthetic;
    AdapterOptions adapter;
};

struct AnchorConfig {
    std::size_t max_k = 3;
    std::size_t n_seeds = 20;
    std::vector<std::size_t> heatmap_layers;  // empty = all
};

struct PipelineConfig {
    BackendConfig backend;
    SegmentOptions segment;
    SearchConfig search;
    CorpusConfig corpus;
    bool corpus_eos_from_backend = true;  // eos_literal not set explicitly
    AnchorConfig anchor;
    std::optional<std::size_t> eval_budget;

    std::string generations_path;  // {id, query, instruction?, raw}
    std::string eval_path;         // {id, generated_text, ground_truth}; optional
    std::string output_dir = "out";

    std::size_t workers = 1;
    std::uint64_t seed = 0;

    void validate() const {
        if (workers < 1) fail(ErrorCode::ConfigError, "workers must be >= 1");
        if (backend.kind == BackendConfig::Kind::Adapter && !wire::is_well_formed_url(backend.adapter.url)) {
            fail(ErrorCode::ConfigError, "malformed adapter url \"" + backend.adapter.url + "\"");
        }
        search.validate();
        corpus.validate();
    }
};

namespace detail {

template <typename T>
T cfg_get(const json& j, const char* key, T fallback) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return fallback;
    try {
        return it->get<T>();
    } catch (const json::exception& e) {
        fail(ErrorCode::ConfigError, std::string("config field \"") + key + "\": " + e.what());
    }
}

inline const json& cfg_section(const json& j, const char* key) {
    static const json empty = json::object();
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return empty;
    if (!it->is_object()) fail(ErrorCode::ConfigError, std::string("config section \"") + key + "\" must be an object");
    return *it;
}

inline std::string resolve(const fs::path& base, const std::string& p) {
    if (p.empty()) return p;
    fs::path path(p);
    return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::ConfigError, "cannot read " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Builds a config from its JSON form; relative paths resolve against `base_dir`.
inline PipelineConfig pipeline_config_from_json(const json& j, const fs::path& base_dir = ".") {
    using detail::cfg_get;
    using detail::cfg_section;
    if (!j.is_object()) fail(ErrorCode::ConfigError, "config must be a JSON object");
    PipelineConfig c;

    const json& b = cfg_section(j, "backend");
    auto kind = cfg_get<std::string>(b, "kind", "synthetic");
    if (kind == "synthetic") {
        c.backend.kind = BackendConfig::Kind::Synthetic;
        json spec = cfg_section(b, "spec");
        if (auto path = cfg_get<std::string>(b, "spec_path", ""); !path.empty()) {
            try {
                spec = json::parse(detail::read_file(detail::resolve(base_dir, path)));
            } catch (const json::exception& e) {
                fail(ErrorCode::ConfigError, "synthetic spec " + path + ": " + e.what());
            }
        }
        try {
            c.backend.synthetic = synthetic_spec_from_json(spec);
        } catch (const json::exception& e) {
            fail(ErrorCode::ConfigError, std::string("synthetic spec: ") + e.what());
        } catch (const Error& e) {
            fail(ErrorCode::ConfigError, e.what());
        }
    } else if (kind == "adapter") {
        c.backend.kind = BackendConfig::Kind::Adapter;
        c.backend.adapter.url = cfg_get<std::string>(b, "url", "");
        c.backend.adapter.connect_timeout_s = cfg_get<int>(b, "connect_timeout_s", c.backend.adapter.connect_timeout_s);
        c.backend.adapter.read_timeout_s = cfg_get<int>(b, "read_timeout_s", c.backend.adapter.read_timeout_s);
    } else {
        fail(ErrorCode::ConfigError, "unknown backend kind \"" + kind + "\"");
    }

    const json& seg = cfg_section(j, "segment");
    c.segment.think_open = cfg_get<std::string>(seg, "think_open", c.segment.think_open);
    c.segment.think_close = cfg_get<std::string>(seg, "think_close", c.segment.think_close);
    c.segment.delimiter = cfg_get<std::string>(seg, "delimiter", c.segment.delimiter);
    c.segment.allow_truncated = cfg_get<bool>(seg, "allow_truncated", c.segment.allow_truncated);
    if (c.segment.delimiter.empty()) fail(ErrorCode::ConfigError, "segment.delimiter must be non-empty");

    const json& s = cfg_section(j, "search");
    c.search.beta = cfg_get<double>(s, "beta", c.search.beta);
    c.search.tau_sim = cfg_get<double>(s, "tau_sim", c.search.tau_sim);
    c.search.low_fraction = cfg_get<double>(s, "low_fraction", c.search.low_fraction);
    c.search.high_fraction = cfg_get<double>(s, "high_fraction", c.search.high_fraction);
    if (s.contains("tie_break_order")) {
        c.search.tie_break_order.clear();
        for (const auto& name : cfg_get<std::vector<std::string>>(s, "tie_break_order", {})) {
            try {
                c.search.tie_break_order.push_back(action_from_string(name));
            } catch (const Error& e) {
                fail(ErrorCode::ConfigError, e.what());
            }
        }
    }
    auto policy = cfg_get<std::string>(s, "fail_policy", "skip_trace");
    if (policy == "skip_trace") c.search.fail_policy = FailPolicy::SkipTrace;
    else if (policy == "fail_fast") c.search.fail_policy = FailPolicy::FailFast;
    else fail(ErrorCode::ConfigError, "unknown fail_policy \"" + policy + "\"");
    c.search.delimiter = c.segment.delimiter;

    const json& cp = cfg_section(j, "corpus");
    c.corpus.control_token = cfg_get<std::string>(cp, "control_token", c.corpus.control_token);
    if (cp.contains("eos_literal")) {
        c.corpus.eos_literal = cfg_get<std::string>(cp, "eos_literal", c.corpus.eos_literal);
        c.corpus_eos_from_backend = false;
    }
    c.corpus.mix_ratio = cfg_get<double>(cp, "mix_ratio", c.corpus.mix_ratio);
    c.corpus.instruction = cfg_get<std::string>(cp, "instruction", c.corpus.instruction);
    c.corpus.max_target_tokens = cfg_get<std::size_t>(cp, "max_target_tokens", c.corpus.max_target_tokens);

    const json& a = cfg_section(j, "anchor");
    c.anchor.max_k = cfg_get<std::size_t>(a, "max_k", c.anchor.max_k);
    c.anchor.n_seeds = cfg_get<std::size_t>(a, "n_seeds", c.anchor.n_seeds);
    c.anchor.heatmap_layers = cfg_get<std::vector<std::size_t>>(a, "heatmap_layers", {});
    if (c.anchor.n_seeds == 0) fail(ErrorCode::ConfigError, "anchor.n_seeds must be >= 1");

    const json& ev = cfg_section(j, "evaluate");
    if (ev.contains("budget") && !ev["budget"].is_null()) c.eval_budget = cfg_get<std::size_t>(ev, "budget", 0);

    const json& p = cfg_section(j, "paths");
    c.generations_path = detail::resolve(base_dir, cfg_get<std::string>(p, "generations", ""));
    c.eval_path = detail::resolve(base_dir, cfg_get<std::string>(p, "eval", ""));
    c.output_dir = detail::resolve(base_dir, cfg_get<std::string>(p, "output_dir", c.output_dir));

    auto workers = cfg_get<long long>(j, "workers", 1);
    if (workers < 1) fail(ErrorCode::ConfigError, "workers must be >= 1");
    c.workers = static_cast<std::size_t>(workers);
    c.seed = cfg_get<std::uint64_t>(j, "seed", 0);
    return c;
}

/// CRISP_BACKEND_URL switches to the adapter backend; CRISP_WORKERS sets the pool size.
inline void apply_env_overrides(PipelineConfig& c) {
    if (const char* url = std::getenv("CRISP_BACKEND_URL"); url && *url) {
        c.backend.kind = BackendConfig::Kind::Adapter;
        c.backend.adapter.url = url;
    }
    if (const char* w = std::getenv("CRISP_WORKERS"); w && *w) {
        char* end = nullptr;
        long long n = std::strtoll(w, &end, 10);
        if (*end != '\0' || n < 1) fail(ErrorCode::ConfigError, std::string("CRISP_WORKERS must be a positive integer, got ") + w);
        c.workers = static_cast<std::size_t>(n);
    }
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
    if (path.empty() || !fs::exists(path)) fail(ErrorCode::ConfigError, "config file not found: " + path);
    json j;
    try {
        j = json::parse(detail::read_file(path));
    } catch (const json::parse_error& e) {
        fail(ErrorCode::ConfigError, path + ": " + e.what());
    }
    auto cfg = pipeline_config_from_json(j, fs::path(path).parent_path());
    apply_env_overrides(cfg);
    cfg.validate();
    return cfg;
}

/// Canonical form of the effective configuration (paths excluded so runs
/// in different directories hash alike).
inline json effective_config_json(const PipelineConfig& c) {
    json backend = c.backend.kind == BackendConfig::Kind::Synthetic
                       ? json{{"kind", "synthetic"}, {"spec", to_json(c.backend.synthetic)}}
                       : json{{"kind", "adapter"}, {"url", c.backend.adapter.url}};
    json order = json::array();
    for (auto a : c.search.tie_break_order) order.push_back(to_string(a));
    return json{{"backend", std::move(backend)},
                {"segment",
                 {{"think_open", c.segment.think_open},
                  {"think_close", c.segment.think_close},
                  {"delimiter", c.segment.delimiter},
                  {"allow_truncated", c.segment.allow_truncated}}},
                {"search",
                 {{"beta", c.search.beta},
                  {"tau_sim", c.search.tau_sim},
                  {"low_fraction", c.search.low_fraction},
                  {"high_fraction", c.search.high_fraction},
                  {"tie_break_order", std::move(order)},
                  {"fail_policy", c.search.fail_policy == FailPolicy::SkipTrace ? "skip_trace" : "fail_fast"}}},
                {"corpus",
                 {{"control_token", c.corpus.control_token},
                  {"eos_literal", c.corpus_eos_from_backend ? json(nullptr) : json(c.corpus.eos_literal)},
                  {"mix_ratio", c.corpus.mix_ratio},
                  {"instruction", c.corpus.instruction},
                  {"max_target_tokens", c.corpus.max_target_tokens}}},
                {"anchor",
                 {{"max_k", c.anchor.max_k}, {"n_seeds", c.anchor.n_seeds}, {"heatmap_layers", c.anchor.heatmap_layers}}},
                {"evaluate", {{"budget", c.eval_budget ? json(*c.eval_budget) : json(nullptr)}}},
                {"workers", c.workers},
                {"seed", c.seed}};
}

inline std::unique_ptr<Oracle> make_oracle(const BackendConfig& b) {
    if (b.kind == BackendConfig::Kind::Synthetic) return std::make_unique<SyntheticOracle>(b.synthetic);
    return std::make_unique<AdapterOracle>(b.adapter);
}

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

template <typename R>
struct ItemResult {
    std::optional<R> value;
    std::exception_ptr error;
};

/// Applies `fn` to every item on `workers` threads; results keep input order.
template <typename In, typename Fn>
auto parallel_map(const std::vector<In>& items, std::size_t workers, Fn fn) {
    using R = std::decay_t<decltype(fn(items.front()))>;
    std::vector<ItemResult<R>> out(items.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < items.size(); i = next++) {
            try {
                out[i].value.emplace(fn(items[i]));
            } catch (...) {
                out[i].error = std::current_exception();
            }
        }
    };
    workers = std::max<std::size_t>(1, std::min(workers, items.size()));
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    return out;
}

/// Per-item failure record kept in the manifest.
struct Drop {
    std::string stage;
    std::string id;
    std::string reason;
};

inline json to_json(const Drop& d) { return json{{"stage", d.stage}, {"id", d.id}, {"reason", d.reason}}; }

/// Rethrows errors that must stop the run; logs the rest as drops.
inline void absorb_error(const std::exception_ptr& e, const std::string& stage, const std::string& id, FailPolicy policy,
                         std::vector<Drop>& drops) {
    try {
        std::rethrow_exception(e);
    } catch (const Error& err) {
        const bool fatal = err.code() == ErrorCode::SchemaViolation || err.category() == ErrorCategory::Config ||
                           (err.category() == ErrorCategory::Backend && policy == FailPolicy::FailFast) ||
                           err.code() == ErrorCode::MissingCapability;
        if (fatal) throw;
        drops.push_back({stage, id, err.what()});
    }
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

struct GenerationRecord {
    std::string id;
    std::string query;
    std::string instruction;
    std::string raw;
};

inline std::vector<GenerationRecord> read_generations(const std::string& path) {
    std::vector<GenerationRecord> out;
    for_each_jsonl(path, [&](const json& j, std::size_t line) {
        GenerationRecord g;
        g.id = require_field<std::string>(j, "id", line);
        g.query = require_field<std::string>(j, "query", line);
        g.instruction = j.value("instruction", std::string(kStandardInstruction));
        g.raw = require_field<std::string>(j, "raw", line);
        out.push_back(std::move(g));
    });
    return out;
}

template <typename T>
struct StageOutput {
    std::vector<T> items;
    std::vector<Drop> drops;
};

/// Segments generations and maps token spans through the backend tokenizer.
inline StageOutput<ReasoningTrace> segment_stage(const std::vector<GenerationRecord>& gens, const SegmentOptions& opts,
                                                 const Oracle& oracle, std::size_t workers, FailPolicy policy) {
    auto results = parallel_map(gens, workers, [&](const GenerationRecord& g) {
        ReasoningTrace t = segment_chain(g.raw, opts);
        t.id = g.id;
        t.query = g.query;
        t.instruction = g.instruction;
        if (!t.truncated) fill_token_spans(t, oracle);
        return t;
    });
    StageOutput<ReasoningTrace> out;
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (results[i].error) absorb_error(results[i].error, "segment", gens[i].id, policy, out.drops);
        else out.items.push_back(std::move(*results[i].value));
    }
    return out;
}

struct ScoredTrace {
    AttentionDump dump;
    SaliencyProfile profile;
};

/// Fetches the anchor attention row for each complete trace and scores its steps.
inline StageOutput<ScoredTrace> score_stage(const std::vector<ReasoningTrace>& traces, const SearchConfig& search,
                                            const Oracle& oracle, std::size_t workers) {
    std::vector<const ReasoningTrace*> todo;
    StageOutput<ScoredTrace> out;
    for (const auto& t : traces) {
        if (t.truncated) out.drops.push_back({"score", t.id, "truncated trace has no anchor"});
        else todo.push_back(&t);
    }
    auto results = parallel_map(todo, workers, [&](const ReasoningTrace* t) {
        ScoredTrace s;
        s.dump = oracle.attention(*t);
        validate(s.dump);
        s.profile = make_profile(*t, s.dump, search.low_fraction, search.high_fraction);
        return s;
    });
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (results[i].error) absorb_error(results[i].error, "score", todo[i]->id, search.fail_policy, out.drops);
        else out.items.push_back(std::move(*results[i].value));
    }
    return out;
}

/// Scores traces against already-extracted dumps (matched by trace id).
inline StageOutput<SaliencyProfile> score_with_dumps(const std::vector<ReasoningTrace>& traces,
                                                     const std::vector<AttentionDump>& dumps, const SearchConfig& search) {
    std::map<std::string, const AttentionDump*> by_id;
    for (const auto& d : dumps) by_id[d.trace_id] = &d;
    StageOutput<SaliencyProfile> out;
    for (const auto& t : traces) {
        auto it = by_id.find(t.id);
        if (it == by_id.end()) {
            out.drops.push_back({"score", t.id, "no attention dump"});
            continue;
        }
        validate(*it->second);
        out.items.push_back(make_profile(t, *it->second, search.low_fraction, search.high_fraction));
    }
    return out;
}

template <typename T>
std::map<std::string, const T*> index_by_id(const std::vector<T>& items, std::string T::*field) {
    std::map<std::string, const T*> m;
    for (const auto& x : items) m[x.*field] = &x;
    return m;
}

inline StageOutput<CompressionResult> compress_stage(const std::vector<ReasoningTrace>& traces,
                                                     const std::vector<SaliencyProfile>& profiles,
                                                     const SearchConfig& search, const Oracle& oracle, std::size_t workers) {
    search.validate();
    auto by_id = index_by_id(profiles, &SaliencyProfile::trace_id);
    std::vector<std::pair<const ReasoningTrace*, const SaliencyProfile*>> todo;
    StageOutput<CompressionResult> out;
    for (const auto& t : traces) {
        auto it = by_id.find(t.id);
        if (it == by_id.end()) out.drops.push_back({"compress", t.id, "no saliency profile"});
        else todo.emplace_back(&t, it->second);
    }
    auto results = parallel_map(todo, workers, [&](const auto& item) { return compress(*item.first, *item.second, search, oracle); });
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (results[i].error) absorb_error(results[i].error, "compress", todo[i].first->id, search.fail_policy, out.drops);
        else out.items.push_back(std::move(*results[i].value));
    }
    return out;
}

inline StageOutput<RefinementOutcome> refine_stage(const std::vector<ReasoningTrace>& traces,
                                                   const std::vector<CompressionResult>& results, const SearchConfig& search,
                                                   const Oracle& oracle, std::size_t workers) {
    auto by_id = index_by_id(traces, &ReasoningTrace::id);
    std::vector<std::pair<const ReasoningTrace*, const CompressionResult*>> todo;
    StageOutput<RefinementOutcome> out;
    for (const auto& r : results) {
        auto it = by_id.find(r.trace_id);
        if (it == by_id.end()) out.drops.push_back({"refine", r.trace_id, "no trace for compression result"});
        else todo.emplace_back(it->second, &r);
    }
    auto outcomes = parallel_map(todo, workers, [&](const auto& item) {
        return refine_chain(*item.first, *item.second, oracle, search.delimiter);
    });
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        if (outcomes[i].error) absorb_error(outcomes[i].error, "refine", todo[i].first->id, search.fail_policy, out.drops);
        else out.items.push_back(std::move(*outcomes[i].value));
    }
    return out;
}

inline Corpus corpus_stage(const std::vector<ReasoningTrace>& traces, const std::vector<RefinementOutcome>& outcomes,
                           const CorpusConfig& cfg, std::uint64_t seed, const Oracle& oracle) {
    auto by_id = index_by_id(traces, &ReasoningTrace::id);
    std::vector<CorpusEntry> entries;
    for (const auto& o : outcomes) {
        auto it = by_id.find(o.trace_id);
        if (it != by_id.end()) entries.push_back({it->second, &o});
    }
    return build_corpus(entries, cfg, seed, oracle);
}

struct EvalInput {
    std::string id;
    std::string generated_text;
    std::string ground_truth;
};

inline std::vector<EvalInput> read_eval_inputs(const std::string& path) {
    std::vector<EvalInput> out;
    for_each_jsonl(path, [&](const json& j, std::size_t line) {
        out.push_back({require_field<std::string>(j, "id", line), require_field<std::string>(j, "generated_text", line),
                       require_field<std::string>(j, "ground_truth", line)});
    });
    return out;
}

struct EvalOutput {
    std::vector<EvalRecord> records;
    MetricReport report;
    TrajectoryStats trajectory;
};

inline EvalOutput evaluate_stage(const std::vector<EvalInput>& inputs, const SegmentOptions& seg,
                                 std::optional<std::size_t> budget, const Oracle& oracle, std::size_t workers) {
    GradeOptions opts{seg.think_open, seg.think_close, seg.delimiter};
    auto counter = [&](const std::string& text) { return oracle.token_count(text); };
    auto results = parallel_map(inputs, workers, [&](const EvalInput& in) {
        return grade(in.id, in.generated_text, in.ground_truth, counter, opts);
    });
    EvalOutput out;
    for (auto& r : results) {
        if (r.error) std::rethrow_exception(r.error);
        out.records.push_back(std::move(*r.value));
    }
    out.report = report(out.records, budget);
    out.trajectory = trajectory_stats(out.records);
    return out;
}

struct AnchorOutput {
    std::vector<PruneExperimentRow> rows;
    std::vector<std::pair<std::string, std::vector<RandomPolicySummary>>> random_summaries;
};

/// Lowest/highest curves plus the seed-aggregated random curve per trace.
inline AnchorOutput anchor_stage(const std::vector<ReasoningTrace>& traces, const std::vector<SaliencyProfile>& profiles,
                                 const AnchorConfig& cfg, std::uint64_t seed, const Oracle& oracle,
                                 const std::string& delimiter, std::size_t workers) {
    auto by_id = index_by_id(profiles, &SaliencyProfile::trace_id);
    std::vector<std::pair<const ReasoningTrace*, const SaliencyProfile*>> todo;
    for (const auto& t : traces) {
        auto it = by_id.find(t.id);
        if (it != by_id.end()) todo.emplace_back(&t, it->second);
    }
    struct PerTrace {
        std::vector<PruneExperimentRow> rows;
        std::vector<RandomPolicySummary> summary;
    };
    auto results = parallel_map(todo, workers, [&](const auto& item) {
        const auto& [t, p] = item;
        std::size_t k = std::min(cfg.max_k, t->steps.size() - 1);
        PerTrace pt;
        for (auto policy : {PrunePolicy::Lowest, PrunePolicy::Highest}) {
            auto rows = prune_and_score(*t, *p, policy, k, oracle, 0, delimiter);
            pt.rows.insert(pt.rows.end(), rows.begin(), rows.end());
        }
        for (std::size_t s = 0; s < cfg.n_seeds; ++s) {
            auto rows = prune_and_score(*t, *p, PrunePolicy::Random, k, oracle, seed + s, delimiter);
            pt.rows.insert(pt.rows.end(), rows.begin(), rows.end());
        }
        pt.summary = random_policy_summary(*t, *p, k, oracle, seed, cfg.n_seeds, delimiter);
        return pt;
    });
    AnchorOutput out;
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (results[i].error) std::rethrow_exception(results[i].error);
        auto& v = *results[i].value;
        out.rows.insert(out.rows.end(), v.rows.begin(), v.rows.end());
        out.random_summaries.emplace_back(todo[i].first->id, std::move(v.summary));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

class RunManifest {
public:
    explicit RunManifest(std::string command) : command_(std::move(command)), started_(Clock::now()) {}

    void set_config(const json& effective) {
        config_ = effective;
        config_hash_ = sha256_hex(effective.dump());
    }

    void count(const std::string& key, std::size_t n) { counts_[key] = n; }

    void add_drops(const std::vector<Drop>& drops) { drops_.insert(drops_.end(), drops.begin(), drops.end()); }

    /// Times `fn` under `stage` and returns its result.
    template <typename Fn>
    auto timed(const std::string& stage, Fn&& fn) {
        auto t0 = Clock::now();
        struct Record {
            RunManifest* m;
            std::string stage;
            Clock::time_point t0;
            ~Record() { m->timings_.emplace_back(stage, std::chrono::duration<double, std::milli>(Clock::now() - t0).count()); }
        } rec{this, stage, t0};
        return fn();
    }

    void artifact(const std::string& path) { artifacts_.push_back(path); }

    void set_error(const Error& e) {
        error_ = json{{"code", std::string(to_string(e.code()))}, {"message", e.what()}};
    }

    void set_error(const std::string& message) { error_ = json{{"code", "Internal"}, {"message", message}}; }

    json to_json() const {
        json counts = json::object();
        for (const auto& [k, v] : counts_) counts[k] = v;
        json timings = json::object();
        for (const auto& [k, v] : timings_) timings[k] = v;
        timings["total"] = std::chrono::duration<double, std::milli>(Clock::now() - started_).count();
        json artifacts = json::array();
        for (const auto& a : artifacts_) {
            json entry{{"path", fs::path(a).filename().string()}};
            entry["sha256"] = fs::exists(a) ? json(sha256_file(a)) : json(nullptr);
            artifacts.push_back(std::move(entry));
        }
        json drops = json::array();
        for (const auto& d : drops_) drops.push_back(crisp::to_json(d));
        return json{{"command", command_},
                    {"status", error_.is_null() ? "ok" : "error"},
                    {"error", error_},
                    {"config_hash", config_hash_.empty() ? json(nullptr) : json(config_hash_)},
                    {"config", config_},
                    {"counts", std::move(counts)},
                    {"timings_ms", std::move(timings)},
                    {"artifacts", std::move(artifacts)},
                    {"drops", std::move(drops)}};
    }

    void write(const std::string& path) const {
        if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << to_json().dump(2) << '\n';
    }

private:
    using Clock = std::chrono::steady_clock;
    std::string command_;
    Clock::time_point started_;
    json config_;
    std::string config_hash_;
    std::map<std::string, std::size_t> counts_;
    std::vector<std::pair<std::string, double>> timings_;
    std::vector<std::string> artifacts_;
    std::vector<Drop> drops_;
    json error_;
};

inline void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::SchemaViolation, "cannot write " + path);
    out << j.dump(2) << '\n';
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::SchemaViolation, "cannot write " + path);
    out << text;
}

/// Runs every stage end to end, writing artifacts into cfg.output_dir.
inline void run_pipeline(const PipelineConfig& cfg, RunManifest& manifest) {
    cfg.validate();
    manifest.set_config(effective_config_json(cfg));
    if (cfg.generations_path.empty()) fail(ErrorCode::ConfigError, "paths.generations is not set");
    fs::create_directories(cfg.output_dir);
    auto out_path = [&](const char* name) {
        auto p = (fs::path(cfg.output_dir) / name).string();
        manifest.artifact(p);
        return p;
    };

    auto oracle = make_oracle(cfg.backend);
    auto caps = oracle->capabilities();
    CorpusConfig corpus_cfg = cfg.corpus;
    if (cfg.corpus_eos_from_backend && !caps.eos_literal.empty()) corpus_cfg.eos_literal = caps.eos_literal;

    auto gens = manifest.timed("read", [&] { return read_generations(cfg.generations_path); });
    manifest.count("generations", gens.size());

    auto seg = manifest.timed("segment", [&] {
        return segment_stage(gens, cfg.segment, *oracle, cfg.workers, cfg.search.fail_policy);
    });
    manifest.add_drops(seg.drops);
    manifest.count("traces", seg.items.size());
    write_traces(seg.items, out_path("traces.jsonl"));

    auto scored = manifest.timed("score", [&] { return score_stage(seg.items, cfg.search, *oracle, cfg.workers); });
    manifest.add_drops(scored.drops);
    std::vector<AttentionDump> dumps;
    std::vector<SaliencyProfile> profiles;
    for (auto& s : scored.items) {
        dumps.push_back(std::move(s.dump));
        profiles.push_back(std::move(s.profile));
    }
    manifest.count("profiles", profiles.size());
    write_attention_dumps(dumps, out_path("attention.jsonl"));
    write_profiles(profiles, out_path("profiles.jsonl"));

    auto compressed = manifest.timed("compress", [&] {
        return compress_stage(seg.items, profiles, cfg.search, *oracle, cfg.workers);
    });
    manifest.add_drops(compressed.drops);
    manifest.count("compressed", compressed.items.size());
    write_compression_report(compressed.items, out_path("compression.jsonl"));

    auto refined = manifest.timed("refine", [&] {
        return refine_stage(seg.items, compressed.items, cfg.search, *oracle, cfg.workers);
    });
    manifest.add_drops(refined.drops);
    manifest.count("refined", refined.items.size());
    write_refinement_report(refined.items, out_path("refinement.jsonl"));

    auto corpus = manifest.timed("build-corpus", [&] {
        return corpus_stage(seg.items, refined.items, corpus_cfg, cfg.seed, *oracle);
    });
    manifest.count("corpus_compressed", corpus.summary.n_compressed);
    manifest.count("corpus_standard", corpus.summary.n_standard);
    manifest.count("corpus_dropped", corpus.summary.n_dropped);
    write_corpus(corpus, out_path("corpus.jsonl"));
    write_json_file(out_path("corpus_summary.json"), to_json(corpus.summary));

    if (!cfg.eval_path.empty()) {
        auto ev = manifest.timed("evaluate", [&] {
            return evaluate_stage(read_eval_inputs(cfg.eval_path), cfg.segment, cfg.eval_budget, *oracle, cfg.workers);
        });
        manifest.count("evaluated", ev.records.size());
        std::vector<json> recs;
        for (const auto& r : ev.records) recs.push_back(to_json(r));
        write_jsonl(out_path("eval_records.jsonl"), recs);
        write_json_file(out_path("eval_report.json"),
                        json{{"report", to_json(ev.report)}, {"trajectory", to_json(ev.trajectory)}});
        write_text_file(out_path("eval_report.txt"), format_report_table({{"run", ev.report}}));
    }

    auto anchor = manifest.timed("anchor-ppl", [&] {
        return anchor_stage(seg.items, profiles, cfg.anchor, cfg.seed, *oracle, cfg.segment.delimiter, cfg.workers);
    });
    manifest.count("anchor_rows", anchor.rows.size());
    write_text_file(out_path("anchor_ppl.tsv"), prune_rows_tsv(anchor.rows));
    {
        std::vector<json> recs;
        for (const auto& [id, summary] : anchor.random_summaries) {
            json curve = json::array();
            for (const auto& s : summary) curve.push_back(to_json(s));
            recs.push_back(json{{"trace_id", id}, {"random", std::move(curve)}});
        }
        write_jsonl(out_path("anchor_random.jsonl"), recs);
    }

    manifest.timed("export-heatmap", [&] {
        std::vector<json> recs;
        for (const auto& d : dumps) recs.push_back(to_json(export_heatmap_data(d, cfg.anchor.heatmap_layers)));
        write_jsonl(out_path("heatmaps.jsonl"), recs);
        return 0;
    });
}

}  // namespace crisp
