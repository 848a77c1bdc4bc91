// crisp — command-line front end for the compression pipeline.
//
// Exit status: 0 success, 2 configuration error, 3 data error,
// 4 backend error, 1 anything unexpected.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crisp/pipeline.hpp"

namespace fs = std::filesystem;
using namespace crisp;

namespace {

struct CommonOptions {
    std::string config_path;
    std::string manifest_path;
    std::string backend_url;
    std::optional<std::size_t> workers;
    std::optional<std::uint64_t> seed;
};

int exit_code_for(const Error& e) {
    switch (e.category()) {
        case ErrorCategory::Config: return 2;
        case ErrorCategory::Data: return 3;
        case ErrorCategory::Backend: return 4;
    }
    return 1;
}

/// Config file when given (must exist), built-in defaults otherwise; flags win.
PipelineConfig resolve_config(const CommonOptions& o) {
    PipelineConfig cfg;
    if (!o.config_path.empty()) {
        cfg = load_pipeline_config(o.config_path);
    } else {
        apply_env_overrides(cfg);
    }
    if (!o.backend_url.empty()) {
        cfg.backend.kind = BackendConfig::Kind::Adapter;
        cfg.backend.adapter.url = o.backend_url;
    }
    if (o.workers) cfg.workers = *o.workers;
    if (o.seed) cfg.seed = *o.seed;
    cfg.validate();
    return cfg;
}

CorpusConfig corpus_config_for(const PipelineConfig& cfg, const Oracle& oracle) {
    CorpusConfig c = cfg.corpus;
    if (cfg.corpus_eos_from_backend) {
        auto eos = oracle.capabilities().eos_literal;
        if (!eos.empty()) c.eos_literal = eos;
    }
    return c;
}

void log_drops(const std::vector<Drop>& drops) {
    for (const auto& d : drops) std::cerr << "[" << d.stage << "] dropped " << d.id << ": " << d.reason << "\n";
}

std::vector<AttentionDump> read_dumps_any(const std::string& path) {
    if (fs::path(path).extension() == ".bin") return read_attention_dumps_binary(path);
    return read_attention_dumps(path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Saliency-guided chain-of-thought compression"};
    app.require_subcommand(1);
    app.fallthrough();

    CommonOptions common;
    app.add_option("-c,--config", common.config_path, "pipeline config file (JSON)");
    app.add_option("--manifest", common.manifest_path, "where to write the run manifest");
    app.add_option("--backend-url", common.backend_url, "use the adapter backend at this URL");
    app.add_option("-j,--workers", common.workers, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--seed", common.seed, "seed for shuffling and random policies");

    std::string in, out, traces_path, profiles_path, dumps_path, dumps_out, compression_path, refinement_path,
        summary_path, records_path, output_dir;
    std::optional<std::size_t> budget, max_k, n_seeds;
    std::vector<std::size_t> layers;

    auto* segment = app.add_subcommand("segment", "split raw generations into traces");
    segment->add_option("-i,--input", in, "generations JSONL {id, query, instruction?, raw}")->required();
    segment->add_option("-o,--output", out, "trace JSONL")->required();

    auto* score = app.add_subcommand("score", "saliency profiles from anchor attention");
    score->add_option("-t,--traces", traces_path)->required();
    score->add_option("--dumps", dumps_path, "existing attention dumps (.jsonl or .bin); fetched from the backend if absent");
    score->add_option("--dumps-out", dumps_out, "write fetched dumps here");
    score->add_option("-o,--output", out, "profile JSONL")->required();

    auto* compress_cmd = app.add_subcommand("compress", "gated greedy search over edit operators");
    compress_cmd->add_option("-t,--traces", traces_path)->required();
    compress_cmd->add_option("-p,--profiles", profiles_path)->required();
    compress_cmd->add_option("-o,--output", out, "compression report JSONL")->required();

    auto* refine = app.add_subcommand("refine", "restore compressed skeletons");
    refine->add_option("-t,--traces", traces_path)->required();
    refine->add_option("--compression", compression_path)->required();
    refine->add_option("-o,--output", out, "refinement report JSONL")->required();

    auto* corpus_cmd = app.add_subcommand("build-corpus", "emit the two-track fine-tuning corpus");
    corpus_cmd->add_option("-t,--traces", traces_path)->required();
    corpus_cmd->add_option("--refinement", refinement_path)->required();
    corpus_cmd->add_option("-o,--output", out, "corpus JSONL")->required();
    corpus_cmd->add_option("--summary", summary_path, "corpus summary JSON");

    auto* evaluate = app.add_subcommand("evaluate", "grade outputs and report accuracy / tokens / TE");
    evaluate->add_option("-i,--input", in, "eval JSONL {id, generated_text, ground_truth}")->required();
    evaluate->add_option("-o,--output", out, "report JSON")->required();
    evaluate->add_option("--records", records_path, "per-record grades JSONL");
    evaluate->add_option("--budget", budget, "token budget label for the report");

    auto* anchor = app.add_subcommand("anchor-ppl", "answer PPL after saliency-ordered step removal");
    anchor->add_option("-t,--traces", traces_path)->required();
    anchor->add_option("-p,--profiles", profiles_path)->required();
    anchor->add_option("-o,--output", out, "plot data TSV")->required();
    anchor->add_option("--summary", summary_path, "random-policy summary JSONL");
    anchor->add_option("-k,--max-k", max_k);
    anchor->add_option("--seeds", n_seeds)->check(CLI::PositiveNumber);

    auto* heatmap = app.add_subcommand("export-heatmap", "head-averaged per-layer attention rows");
    heatmap->add_option("--dumps", dumps_path)->required();
    heatmap->add_option("-o,--output", out, "heatmap JSONL")->required();
    heatmap->add_option("--layers", layers, "layer indices (default: all)");

    auto* pipeline = app.add_subcommand("pipeline", "run every stage end to end");
    pipeline->add_option("--output-dir", output_dir, "overrides paths.output_dir");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    auto* sub = app.get_subcommands().front();
    RunManifest manifest(sub->get_name());
    std::string manifest_path = common.manifest_path;
    if (manifest_path.empty()) {
        if (sub == pipeline) {
            manifest_path = (fs::path(output_dir.empty() ? "." : output_dir) / "manifest.json").string();
        } else {
            manifest_path = out + ".manifest.json";
        }
    }

    int rc = 0;
    try {
        PipelineConfig cfg = resolve_config(common);
        manifest.set_config(effective_config_json(cfg));
        if (sub == pipeline) {
            if (!output_dir.empty()) cfg.output_dir = output_dir;
            if (common.manifest_path.empty()) manifest_path = (fs::path(cfg.output_dir) / "manifest.json").string();
            run_pipeline(cfg, manifest);
        } else {
            auto oracle = make_oracle(cfg.backend);
            manifest.artifact(out);
            if (sub == segment) {
                auto gens = read_generations(in);
                auto r = manifest.timed("segment", [&] {
                    return segment_stage(gens, cfg.segment, *oracle, cfg.workers, cfg.search.fail_policy);
                });
                log_drops(r.drops);
                manifest.add_drops(r.drops);
                manifest.count("generations", gens.size());
                manifest.count("traces", r.items.size());
                write_traces(r.items, out);
            } else if (sub == score) {
                auto traces = read_traces(traces_path);
                std::vector<SaliencyProfile> profiles;
                if (!dumps_path.empty()) {
                    auto r = manifest.timed("score", [&] { return score_with_dumps(traces, read_dumps_any(dumps_path), cfg.search); });
                    log_drops(r.drops);
                    manifest.add_drops(r.drops);
                    profiles = std::move(r.items);
                } else {
                    auto r = manifest.timed("score", [&] { return score_stage(traces, cfg.search, *oracle, cfg.workers); });
                    log_drops(r.drops);
                    manifest.add_drops(r.drops);
                    std::vector<AttentionDump> dumps;
                    for (auto& s : r.items) {
                        dumps.push_back(std::move(s.dump));
                        profiles.push_back(std::move(s.profile));
                    }
                    if (!dumps_out.empty()) {
                        if (fs::path(dumps_out).extension() == ".bin") write_attention_dumps_binary(dumps, dumps_out);
                        else write_attention_dumps(dumps, dumps_out);
                        manifest.artifact(dumps_out);
                    }
                }
                manifest.count("profiles", profiles.size());
                write_profiles(profiles, out);
            } else if (sub == compress_cmd) {
                auto traces = read_traces(traces_path);
                auto profiles = read_profiles(profiles_path);
                auto r = manifest.timed("compress", [&] { return compress_stage(traces, profiles, cfg.search, *oracle, cfg.workers); });
                log_drops(r.drops);
                manifest.add_drops(r.drops);
                manifest.count("compressed", r.items.size());
                write_compression_report(r.items, out);
            } else if (sub == refine) {
                auto traces = read_traces(traces_path);
                auto results = read_compression_report(compression_path);
                auto r = manifest.timed("refine", [&] { return refine_stage(traces, results, cfg.search, *oracle, cfg.workers); });
                log_drops(r.drops);
                manifest.add_drops(r.drops);
                manifest.count("refined", r.items.size());
                write_refinement_report(r.items, out);
            } else if (sub == corpus_cmd) {
                auto traces = read_traces(traces_path);
                auto outcomes = read_refinement_report(refinement_path);
                auto corpus = manifest.timed("build-corpus", [&] {
                    return corpus_stage(traces, outcomes, corpus_config_for(cfg, *oracle), cfg.seed, *oracle);
                });
                manifest.count("corpus_compressed", corpus.summary.n_compressed);
                manifest.count("corpus_standard", corpus.summary.n_standard);
                manifest.count("corpus_dropped", corpus.summary.n_dropped);
                write_corpus(corpus, out);
                if (!summary_path.empty()) {
                    write_json_file(summary_path, to_json(corpus.summary));
                    manifest.artifact(summary_path);
                }
            } else if (sub == evaluate) {
                auto inputs = read_eval_inputs(in);
                auto ev = manifest.timed("evaluate", [&] {
                    return evaluate_stage(inputs, cfg.segment, budget ? budget : cfg.eval_budget, *oracle, cfg.workers);
                });
                manifest.count("evaluated", ev.records.size());
                write_json_file(out, json{{"report", to_json(ev.report)}, {"trajectory", to_json(ev.trajectory)}});
                if (!records_path.empty()) {
                    std::vector<json> recs;
                    for (const auto& r : ev.records) recs.push_back(to_json(r));
                    write_jsonl(records_path, recs);
                    manifest.artifact(records_path);
                }
                std::cout << format_report_table({{fs::path(in).stem().string(), ev.report}});
            } else if (sub == anchor) {
                auto traces = read_traces(traces_path);
                auto profiles = read_profiles(profiles_path);
                AnchorConfig acfg = cfg.anchor;
                if (max_k) acfg.max_k = *max_k;
                if (n_seeds) acfg.n_seeds = *n_seeds;
                auto r = manifest.timed("anchor-ppl", [&] {
                    return anchor_stage(traces, profiles, acfg, cfg.seed, *oracle, cfg.segment.delimiter, cfg.workers);
                });
                manifest.count("anchor_rows", r.rows.size());
                write_text_file(out, prune_rows_tsv(r.rows));
                if (!summary_path.empty()) {
                    std::vector<json> recs;
                    for (const auto& [id, summary] : r.random_summaries) {
                        json curve = json::array();
                        for (const auto& s : summary) curve.push_back(to_json(s));
                        recs.push_back(json{{"trace_id", id}, {"random", std::move(curve)}});
                    }
                    write_jsonl(summary_path, recs);
                    manifest.artifact(summary_path);
                }
            } else if (sub == heatmap) {
                auto dumps = read_dumps_any(dumps_path);
                std::vector<json> recs;
                for (const auto& d : dumps) recs.push_back(to_json(export_heatmap_data(d, layers.empty() ? cfg.anchor.heatmap_layers : layers)));
                manifest.count("heatmaps", recs.size());
                write_jsonl(out, recs);
            }
        }
    } catch (const Error& e) {
        std::cerr << "crisp " << sub->get_name() << ": " << e.what() << "\n";
        manifest.set_error(e);
        rc = exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "crisp " << sub->get_name() << ": " << e.what() << "\n";
        manifest.set_error(e.what());
        rc = 1;
    }

    try {
        manifest.write(manifest_path);
    } catch (const std::exception& e) {
        std::cerr << "crisp: could not write manifest " << manifest_path << ": " << e.what() << "\n";
        if (rc == 0) rc = 1;
    }
    return rc;
}
