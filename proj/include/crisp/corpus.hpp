#pragma once

/**
 * Multi-task fine-tuning corpus.
 *
 *   standard track:   input  = question \n instruction
 *                     target = <think> original think region </think> answer
 *   compressed track: input  = question \n instruction (no final period) [EOS]<|compressed|>[EOS]
 *                     target = <think>\n refined chain \n</think> answer
 *
 * Originals are mixed in at mix_ratio per compressed sample and the whole
 * corpus is shuffled with a seeded Fisher-Yates pass.
 */

#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "oracle.hpp"
#include "random.hpp"
#include "refiner.hpp"
#include "text.hpp"
#include "trace.hpp"

namespace crisp {

enum class Track { Standard, Compressed };

inline std::string to_string(Track t) { return t == Track::Standard ? "standard" : "compressed"; }

struct TrainingSample {
    std::string input_text;
    std::string target_text;
    Track track = Track::Standard;
    std::string trace_id;
    bool operator==(const TrainingSample&) const = default;
};

struct CorpusConfig {
    std::string control_token = "<|compressed|>";
    std::string eos_literal = "[EOS]";
    double mix_ratio = 1.0;
    std::string instruction{kStandardInstruction};
    std::size_t max_target_tokens = 8192;

    void validate() const {
        if (!(mix_ratio >= 0.0)) fail(ErrorCode::ConfigError, "mix_ratio must be >= 0");
        if (control_token.empty()) fail(ErrorCode::ConfigError, "control_token must be non-empty");
    }

    std::string control_suffix() const { return eos_literal + control_token + eos_literal; }
};

/// The instruction a trace was generated with, or the configured default.
inline const std::string& instruction_for(const ReasoningTrace& trace, const CorpusConfig& cfg) {
    return trace.instruction.empty() ? cfg.instruction : trace.instruction;
}

inline std::string standard_input(const ReasoningTrace& trace, const CorpusConfig& cfg) {
    return trace.query + "\n" + instruction_for(trace, cfg);
}

inline std::string compressed_input(const ReasoningTrace& trace, const CorpusConfig& cfg) {
    std::string instruction = instruction_for(trace, cfg);
    if (!instruction.empty() && instruction.back() == '.') instruction.pop_back();
    return trace.query + "\n" + instruction + cfg.control_suffix();
}

inline void check_target_length(const std::string& target, const CorpusConfig& cfg, const Oracle& oracle,
                                const std::string& trace_id) {
    std::size_t n = oracle.token_count(target);
    if (n > cfg.max_target_tokens) {
        fail(ErrorCode::TargetTooLong, "trace " + trace_id + ": target has " + std::to_string(n) + " tokens (max " +
                                           std::to_string(cfg.max_target_tokens) + ")");
    }
}

inline TrainingSample build_sample_compressed(const ReasoningTrace& trace, const RefinementOutcome& refined,
                                              const CorpusConfig& cfg, const Oracle& oracle) {
    if (refined.status == RefineStatus::Rejected) {
        fail(ErrorCode::InvalidArgument, "trace " + trace.id + ": refinement was rejected");
    }
    TrainingSample s;
    s.trace_id = trace.id;
    s.track = Track::Compressed;
    s.input_text = compressed_input(trace, cfg);
    s.target_text = trace.think_open + "\n" + refined.refined_text + "\n" + trace.think_close + trace.answer;
    check_target_length(s.target_text, cfg, oracle, trace.id);
    return s;
}

inline TrainingSample build_sample_standard(const ReasoningTrace& trace, const CorpusConfig& cfg, const Oracle& oracle) {
    TrainingSample s;
    s.trace_id = trace.id;
    s.track = Track::Standard;
    s.input_text = standard_input(trace, cfg);
    s.target_text = trace.think_open + think_region(trace) + trace.think_close + trace.answer;
    check_target_length(s.target_text, cfg, oracle, trace.id);
    return s;
}

struct CorpusEntry {
    const ReasoningTrace* trace = nullptr;
    const RefinementOutcome* outcome = nullptr;
};

struct CorpusSummary {
    std::size_t n_compressed = 0;
    std::size_t n_standard = 0;
    std::size_t n_dropped = 0;
    double mean_target_tokens_compressed = 0.0;
    double mean_target_tokens_standard = 0.0;
    std::vector<std::string> drop_log;
};

struct Corpus {
    std::vector<TrainingSample> samples;
    CorpusSummary summary;
};

inline Corpus build_corpus(const std::vector<CorpusEntry>& entries, const CorpusConfig& cfg, std::uint64_t shuffle_seed,
                           const Oracle& oracle) {
    cfg.validate();
    Corpus corpus;
    double tok_c = 0.0, tok_s = 0.0;

    for (const auto& e : entries) {
        if (e.outcome == nullptr || e.outcome->status == RefineStatus::Rejected) {
            corpus.summary.drop_log.push_back(e.trace->id + ": no usable refinement");
            ++corpus.summary.n_dropped;
            continue;
        }
        try {
            corpus.samples.push_back(build_sample_compressed(*e.trace, *e.outcome, cfg, oracle));
            tok_c += static_cast<double>(oracle.token_count(corpus.samples.back().target_text));
            ++corpus.summary.n_compressed;
        } catch (const Error& err) {
            if (err.code() != ErrorCode::TargetTooLong) throw;
            corpus.summary.drop_log.push_back(err.what());
            ++corpus.summary.n_dropped;
        }
    }

    SeededRng rng(shuffle_seed);
    std::vector<std::size_t> order(entries.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    const auto wanted = static_cast<std::size_t>(cfg.mix_ratio * static_cast<double>(corpus.summary.n_compressed));
    for (std::size_t k = 0; k < wanted && !order.empty(); ++k) {
        const auto& trace = *entries[order[k % order.size()]].trace;
        try {
            corpus.samples.push_back(build_sample_standard(trace, cfg, oracle));
            tok_s += static_cast<double>(oracle.token_count(corpus.samples.back().target_text));
            ++corpus.summary.n_standard;
        } catch (const Error& err) {
            if (err.code() != ErrorCode::TargetTooLong) throw;
            corpus.summary.drop_log.push_back(err.what());
            ++corpus.summary.n_dropped;
        }
    }

    rng.shuffle(corpus.samples);
    if (corpus.summary.n_compressed) tok_c /= static_cast<double>(corpus.summary.n_compressed);
    if (corpus.summary.n_standard) tok_s /= static_cast<double>(corpus.summary.n_standard);
    corpus.summary.mean_target_tokens_compressed = tok_c;
    corpus.summary.mean_target_tokens_standard = tok_s;
    return corpus;
}

inline json to_json(const TrainingSample& s) {
    return json{{"input", s.input_text}, {"target", s.target_text}, {"track", to_string(s.track)}, {"trace_id", s.trace_id}};
}

inline json to_json(const CorpusSummary& s) {
    return json{{"n_compressed", s.n_compressed},
                {"n_standard", s.n_standard},
                {"n_dropped", s.n_dropped},
                {"mean_target_tokens_compressed", s.mean_target_tokens_compressed},
                {"mean_target_tokens_standard", s.mean_target_tokens_standard},
                {"drops", s.drop_log}};
}

inline void write_corpus(const Corpus& corpus, const std::string& path) {
    std::vector<json> records;
    records.reserve(corpus.samples.size());
    for (const auto& s : corpus.samples) records.push_back(to_json(s));
    write_jsonl(path, records);
}

inline std::vector<TrainingSample> read_corpus(const std::string& path) {
    std::vector<TrainingSample> out;
    for_each_jsonl(path, [&](const json& j, std::size_t line) {
        TrainingSample s;
        s.input_text = require_field<std::string>(j, "input", line);
        s.target_text = require_field<std::string>(j, "target", line);
        auto track = require_field<std::string>(j, "track", line);
        if (track != "standard" && track != "compressed") fail(ErrorCode::SchemaViolation, "line " + std::to_string(line) + ": bad track");
        s.track = track == "standard" ? Track::Standard : Track::Compressed;
        s.trace_id = require_field<std::string>(j, "trace_id", line);
        out.push_back(std::move(s));
    });
    return out;
}

}  // namespace crisp
