// Command-line front end: dataset statistics and validation, synthetic data
// generation, question-bank building, experiment runs, sweeps, fine-tune
// export, and report regeneration. Configuration comes from one spec file
// plus flag overrides (flags > file > defaults); every run directory gets the
// fully resolved spec so results can be reproduced from it alone.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tef/dataset_io.hpp"
#include "tef/finetune.hpp"
#include "tef/runspec.hpp"

namespace {

using namespace tef;

// ---------------------------------------------------------------------------
// Small file helpers

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

std::string iso_now() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------------------
// Spec assembly: defaults, then the --spec file, then explicit flags.

struct SpecArgs {
    std::string spec_file;
    CLI::App* cmd{nullptr};
    // (option, apply-to-spec) pairs; only options the user actually passed run.
    std::vector<std::pair<CLI::Option*, std::function<void(RunSpec&)>>> setters;

    template <class T, class Fn>
    void add(const std::string& name, T& storage, const std::string& desc, Fn apply) {
        CLI::Option* o = cmd->add_option(name, storage, desc);
        setters.emplace_back(o, [&storage, apply](RunSpec& s) { apply(s, storage); });
    }

    RunSpec resolve() const {
        RunSpec s;
        if (!spec_file.empty()) s = load_runspec(spec_file);
        for (const auto& [opt, apply] : setters)
            if (opt->count() > 0) apply(s);
        if (s.experiment.model_id.empty()) s.experiment.model_id = "offline-scripted";
        return s;
    }
};

/// Flag set shared by every spec-driven command. Storage must outlive parsing,
/// so the caller owns it.
struct SpecFlagStore {
    std::string manifest, bank_path, bank_split, task, strategy, model_id;
    std::uint64_t bank_seed{0};
    std::size_t max_questions{0}, workers{0};
    std::string mode, format, scope, retriever;
    std::int64_t history_length{0}, horizon{0};
    std::size_t max_events{0}, max_texts{0};
    std::string backend, policy, label, record_transport, cache, out_dir;
    int max_in_flight{0}, max_retries{0}, retry_base_ms{0}, sparsity_bins{0};
    double rate_per_sec{0};
};

void add_spec_options(SpecArgs& a, SpecFlagStore& f) {
    a.cmd->add_option("--spec", a.spec_file, "run spec file (JSON)");
    a.add("--manifest", f.manifest, "dataset manifest path",
          [](RunSpec& s, const std::string& v) { s.manifest = v; });
    a.add("--bank", f.bank_path, "stored question bank to reuse",
          [](RunSpec& s, const std::string& v) { s.bank_path = v; });
    a.add("--bank-split", f.bank_split, "split to sample questions from (train|val|test)",
          [](RunSpec& s, const std::string& v) { s.bank_split = split_from_string(v); });
    a.add("--task", f.task, "object|relation",
          [](RunSpec& s, const std::string& v) { s.experiment.task = task_from_string(v); });
    a.add("--strategy", f.strategy, "negative sampling: history|global|generated",
          [](RunSpec& s, const std::string& v) {
              s.experiment.strategy = strategy_from_string(v);
          });
    a.add("--bank-seed", f.bank_seed, "question bank RNG seed",
          [](RunSpec& s, std::uint64_t v) { s.experiment.bank_seed = v; });
    a.add("--max-questions", f.max_questions, "cap on questions (0 = all)",
          [](RunSpec& s, std::size_t v) { s.experiment.max_questions = v; });
    a.add("--workers", f.workers, "worker threads (0 = auto)",
          [](RunSpec& s, std::size_t v) { s.experiment.workers = v; });
    a.add("--model-id", f.model_id, "model identifier sent to the backend",
          [](RunSpec& s, const std::string& v) { s.experiment.model_id = v; });
    a.add("--mode", f.mode, "history mode: rule|retrieved|none",
          [](RunSpec& s, const std::string& v) {
              s.experiment.history.mode = history_mode_from_string(v);
          });
    a.add("--format", f.format, "history format: graph|text|mixed",
          [](RunSpec& s, const std::string& v) {
              s.experiment.history.format = history_format_from_string(v);
          });
    a.add("--scope", f.scope, "history scope: none|global|complex-event",
          [](RunSpec& s, const std::string& v) {
              s.experiment.history.scope = scope_from_string(v);
          });
    a.add("--retriever", f.retriever, "retriever: bm25|dense",
          [](RunSpec& s, const std::string& v) {
              s.experiment.history.retriever = retriever_from_string(v);
          });
    a.add("--history-length", f.history_length, "history window in days",
          [](RunSpec& s, std::int64_t v) { s.experiment.history.history_length_days = v; });
    a.add("--horizon", f.horizon, "forecast horizon in days",
          [](RunSpec& s, std::int64_t v) { s.experiment.history.horizon_days = v; });
    a.add("--max-events", f.max_events, "cap on history events per prompt",
          [](RunSpec& s, std::size_t v) { s.experiment.history.max_events = v; });
    a.add("--max-texts", f.max_texts, "cap on history texts per prompt",
          [](RunSpec& s, std::size_t v) { s.experiment.history.max_texts = v; });
    a.add("--backend", f.backend, "gateway backend: scripted|live|record|replay",
          [](RunSpec& s, const std::string& v) { s.backend = backend_from_string(v); });
    a.add("--scripted-policy", f.policy,
          "scripted backend policy: recency|fixed-label|echo-candidates|scripted-map",
          [](RunSpec& s, const std::string& v) {
              s.scripted_policy = scripted_policy_from_string(v);
          });
    a.add("--scripted-label", f.label, "fixed-label policy answer (A..F)",
          [](RunSpec& s, const std::string& v) {
              if (v.size() != 1) throw ConfigError("scripted label must be one letter");
              s.scripted_label = v[0];
          });
    a.add("--record-transport", f.record_transport,
          "transport behind the record backend: scripted|live",
          [](RunSpec& s, const std::string& v) { s.record_transport = v; });
    a.add("--cache", f.cache, "replay cache path (record/replay backends)",
          [](RunSpec& s, const std::string& v) { s.cache_path = v; });
    a.add("--out", f.out_dir, "output directory",
          [](RunSpec& s, const std::string& v) { s.out_dir = v; });
    a.add("--max-in-flight", f.max_in_flight, "concurrent gateway requests",
          [](RunSpec& s, int v) { s.max_in_flight = v; });
    a.add("--max-retries", f.max_retries, "transport retry attempts",
          [](RunSpec& s, int v) { s.max_retries = v; });
    a.add("--retry-base-ms", f.retry_base_ms, "base backoff in milliseconds",
          [](RunSpec& s, int v) { s.retry_base_ms = v; });
    a.add("--rate-per-sec", f.rate_per_sec, "request rate limit (0 = none)",
          [](RunSpec& s, double v) { s.rate_per_sec = v; });
    a.add("--sparsity-bins", f.sparsity_bins, "bins in the sparsity breakdown",
          [](RunSpec& s, int v) { s.sparsity_bins = v; });
}

RunSpec require_manifest(RunSpec s) {
    if (s.manifest.empty())
        throw ConfigError("no dataset manifest given (use --manifest or the spec file)");
    return s;
}

// ---------------------------------------------------------------------------
// stats / validate

std::string stats_to_csv(const DatasetStats& st) {
    std::string out = "split,events,complex_events,entities,relations,documents\n";
    char buf[160];
    auto row = [&](const char* label, const SplitCounts& c) {
        std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%zu,%zu,%zu\n", label, c.events,
                      c.complex_events, c.entities, c.relations, c.documents);
        out += buf;
    };
    if (st.train) row("train", *st.train);
    if (st.val) row("val", *st.val);
    if (st.test) row("test", *st.test);
    row("total", st.total);
    return out;
}

int cmd_stats(const std::string& manifest, const std::string& out_dir) {
    Dataset ds = load_dataset(manifest);
    DatasetStats st = compute_stats(ds);
    std::string table = stats_to_text(st, ds);
    std::string csv = stats_to_csv(st);
    std::cout << table;
    if (out_dir.empty()) {
        std::cout << '\n' << csv;
    } else {
        std::filesystem::create_directories(out_dir);
        std::filesystem::path dir(out_dir);
        write_file(dir / "stats.txt", table);
        write_file(dir / "stats.csv", csv);
        write_file(dir / "stats.json", stats_to_json(st).dump(2) + "\n");
        std::cout << "\nwrote " << (dir / "stats.csv").string() << '\n';
    }
    return 0;
}

int cmd_validate(const std::string& manifest) {
    DatasetData data = load_dataset_data(manifest);
    ValidationReport report = validate_dataset(data);
    if (report.ok()) {
        std::cout << "ok: dataset is well-formed\n";
        return 0;
    }
    std::cerr << report.to_text();
    std::cerr << report.violations.size() << " violation(s)\n";
    return 2;
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const SyntheticSpec& spec, const std::string& out_dir, const std::string& name) {
    DatasetData data = generate_synthetic(spec);
    auto manifest = save_dataset(data, out_dir, name);
    Dataset ds(std::move(data));
    std::cout << stats_to_text(compute_stats(ds), ds);
    std::cout << "wrote " << manifest.string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// make-bank

int cmd_make_bank(const RunSpec& spec, const std::string& out_file) {
    check_runspec(spec);
    Dataset ds = load_dataset(spec.manifest);
    std::unique_ptr<Gateway> gateway;
    if (spec.experiment.strategy == Strategy::generated) gateway = make_gateway_ptr(spec);
    auto bank = build_question_bank(ds, bank_config_of(spec), gateway.get());
    save_question_bank(out_file, bank, bank_config_of(spec), spec.manifest.string());
    std::cout << "wrote " << out_file << " (" << bank.size() << " questions)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// run

void write_run_outputs(const RunSpec& spec, const Dataset& ds, const ExperimentResult& result,
                       const GatewayStats& stats, const std::string& started,
                       double duration_ms) {
    std::filesystem::path dir = spec.out_dir;
    std::filesystem::create_directories(dir);
    write_file(dir / "spec.resolved", runspec_to_json(spec).dump(2) + "\n");
    save_records(dir / "records.ndjson", result);
    save_latencies(dir / "latencies.ndjson", result);
    write_file(dir / "summary.json", summary_to_json(result).dump(2) + "\n");
    SparsityBreakdown breakdown = sparsity_breakdown(result, ds, spec.sparsity_bins);
    write_file(dir / "breakdown.json", breakdown_to_json(breakdown).dump(2) + "\n");
    write_file(dir / "breakdown.csv", breakdown_to_csv(breakdown));
    nlohmann::json meta{{"started_at", started},
                        {"finished_at", iso_now()},
                        {"duration_ms", duration_ms},
                        {"transport_calls", stats.transport_calls},
                        {"cache_hits", stats.cache_hits},
                        {"retries", stats.retries}};
    write_file(dir / "run_meta.json", meta.dump(2) + "\n");
}

int cmd_run(const RunSpec& spec) {
    check_runspec(spec);
    if (spec.out_dir.empty()) throw ConfigError("run needs an output directory (--out)");
    std::string started = iso_now();
    auto t0 = std::chrono::steady_clock::now();

    Dataset ds = load_dataset(spec.manifest);
    Gateway gateway = make_gateway(spec);
    auto bank = obtain_bank(ds, spec, &gateway);
    ExperimentResult result = run_experiment(ds, bank, spec.experiment, gateway);

    double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
    write_run_outputs(spec, ds, result, gateway.stats(), started, ms);
    std::printf("n=%zu accuracy=%.4f invalid_rate=%.4f\n", result.records.size(),
                result.accuracy, result.invalid_rate);
    std::cout << "wrote " << (std::filesystem::path(spec.out_dir) / "summary.json").string()
              << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// sweep

int cmd_sweep(const RunSpec& spec, const std::string& axis_name,
              std::vector<std::string> values) {
    check_runspec(spec);
    if (spec.out_dir.empty()) throw ConfigError("sweep needs an output directory (--out)");
    SweepAxis axis = sweep_axis_from_string(axis_name);
    if (values.empty()) values = default_axis_values(axis);
    std::string started = iso_now();

    Dataset ds = load_dataset(spec.manifest);
    Gateway gateway = make_gateway(spec);
    auto bank = obtain_bank(ds, spec, &gateway);
    BankConfig bc = bank_config_of(spec);

    std::filesystem::path dir = spec.out_dir;
    std::filesystem::create_directories(dir);
    write_file(dir / "spec.resolved", runspec_to_json(spec).dump(2) + "\n");

    auto finish = [&](const SweepTable& table) {
        write_file(dir / "sweep.csv", sweep_to_csv(table));
        nlohmann::json meta{{"started_at", started},
                            {"finished_at", iso_now()},
                            {"axis", to_string(table.axis)},
                            {"partial", table.partial}};
        if (table.partial) meta["error"] = table.error;
        write_file(dir / "run_meta.json", meta.dump(2) + "\n");
    };

    SweepTable partial;
    try {
        SweepTable table = sweep(ds, bank, spec.experiment, axis, values, gateway, {}, &bc,
                                 &partial);
        finish(table);
    } catch (...) {
        finish(partial);  // keep the completed rows for debugging
        throw;
    }
    std::cout << "wrote " << (dir / "sweep.csv").string() << " (" << values.size()
              << " rows)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// export-finetune

int cmd_export_finetune(const RunSpec& spec, const std::string& split_name,
                        const std::string& out_file) {
    check_runspec(spec);
    Dataset ds = load_dataset(spec.manifest);
    SplitName split = split_from_string(split_name);
    std::unique_ptr<Gateway> gateway;
    if (spec.experiment.strategy == Strategy::generated) gateway = make_gateway_ptr(spec);
    BankConfig bc = bank_config_of(spec);
    bc.split = split;
    auto records = export_finetune_records(ds, split, spec.experiment.history, bc, {},
                                           gateway.get());
    save_finetune_records(out_file, records);
    std::cout << "wrote " << out_file << " (" << records.size() << " records)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// report: recompute summary + breakdown from a run directory's records

int cmd_report(const std::string& run_dir, int bins) {
    std::filesystem::path dir(run_dir);
    RunSpec spec = load_runspec(dir / "spec.resolved");
    if (bins > 0) spec.sparsity_bins = bins;
    Dataset ds = load_dataset(spec.manifest);

    ExperimentResult result;
    result.config = spec.experiment;
    result.records = load_records(dir / "records.ndjson");
    result.accuracy = compute_accuracy(result.records);
    result.invalid_rate = compute_invalid_rate(result.records);

    write_file(dir / "summary.json", summary_to_json(result).dump(2) + "\n");
    SparsityBreakdown breakdown = sparsity_breakdown(result, ds, spec.sparsity_bins);
    write_file(dir / "breakdown.json", breakdown_to_json(breakdown).dump(2) + "\n");
    write_file(dir / "breakdown.csv", breakdown_to_csv(breakdown));
    std::cout << breakdown_to_csv(breakdown);
    std::printf("n=%zu accuracy=%.4f invalid_rate=%.4f\n", result.records.size(),
                result.accuracy, result.invalid_rate);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"temporal event forecasting benchmark harness"};
    app.require_subcommand(1);

    // stats
    auto* stats = app.add_subcommand("stats", "dataset statistics as a table + CSV");
    std::string stats_manifest, stats_out;
    stats->add_option("manifest", stats_manifest, "dataset manifest.json")->required();
    stats->add_option("--out", stats_out, "directory for stats.{txt,csv,json}");

    // validate
    auto* validate = app.add_subcommand("validate", "check dataset structural invariants");
    std::string validate_manifest;
    validate->add_option("manifest", validate_manifest, "dataset manifest.json")->required();

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    SyntheticSpec synth_spec;
    std::string synth_out, synth_name = "synthetic";
    synth->add_option("--seed", synth_spec.seed, "RNG seed");
    synth->add_option("--ces", synth_spec.num_complex_events, "number of complex events");
    synth->add_option("--days", synth_spec.days_per_ce, "days per complex event");
    synth->add_option("--events-per-day", synth_spec.events_per_day, "events per CE per day");
    synth->add_option("--entities-per-ce", synth_spec.entities_per_ce, "local actor pool size");
    synth->add_option("--relations", synth_spec.num_relations, "relation vocabulary size");
    synth->add_option("--periodic-fraction", synth_spec.periodic_fraction,
                      "fraction of periodic slots");
    synth->add_option("--copy-fraction", synth_spec.copy_head_fraction,
                      "fraction of copy-head slots");
    synth->add_option("--copy-probability", synth_spec.copy_probability,
                      "copy-head carry-over probability");
    synth->add_option("--period", synth_spec.period, "periodic slot period in days");
    synth->add_option("--stride", synth_spec.ce_start_stride, "start-day stride between CEs");
    synth->add_option("--train-fraction", synth_spec.train_fraction, "train split fraction");
    synth->add_option("--val-fraction", synth_spec.val_fraction, "val split fraction");
    synth->add_option("--epoch", synth_spec.epoch_date, "epoch date (YYYY-MM-DD)");
    synth->add_option("--name", synth_name, "dataset name in the manifest");
    synth->add_option("--out", synth_out, "output directory")->required();

    // make-bank
    auto* make_bank = app.add_subcommand("make-bank", "sample a question bank");
    SpecArgs mb_args;
    SpecFlagStore mb_store;
    mb_args.cmd = make_bank;
    add_spec_options(mb_args, mb_store);
    std::string mb_out;
    make_bank->add_option("--out-file", mb_out, "bank file to write")->required();

    // run
    auto* run = app.add_subcommand("run", "answer a question bank and write results");
    SpecArgs run_args;
    SpecFlagStore run_store;
    run_args.cmd = run;
    add_spec_options(run_args, run_store);

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "run one experiment per axis value");
    SpecArgs sw_args;
    SpecFlagStore sw_store;
    sw_args.cmd = sweep_cmd;
    add_spec_options(sw_args, sw_store);
    std::string sw_axis;
    std::vector<std::string> sw_values;
    sweep_cmd->add_option("--axis", sw_axis,
                          "history_length|horizon|scope|retriever|strategy|format")
        ->required();
    sweep_cmd->add_option("--values", sw_values, "axis values (default: the standard set)")
        ->delimiter(',');

    // export-finetune
    auto* exportft = app.add_subcommand("export-finetune",
                                        "emit instruction-tuning records");
    SpecArgs ft_args;
    SpecFlagStore ft_store;
    ft_args.cmd = exportft;
    add_spec_options(ft_args, ft_store);
    std::string ft_split = "train", ft_out;
    exportft->add_option("--split", ft_split, "split to export (default train)");
    exportft->add_option("--out-file", ft_out, "records file to write")->required();

    // report
    auto* report = app.add_subcommand("report", "recompute summary + breakdown for a run");
    std::string report_dir;
    int report_bins = 0;
    report->add_option("run_dir", report_dir, "existing run directory")->required();
    report->add_option("--bins", report_bins, "override sparsity bins");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*stats) return cmd_stats(stats_manifest, stats_out);
        if (*validate) return cmd_validate(validate_manifest);
        if (*synth) return cmd_synth(synth_spec, synth_out, synth_name);
        if (*make_bank) return cmd_make_bank(require_manifest(mb_args.resolve()), mb_out);
        if (*run) return cmd_run(require_manifest(run_args.resolve()));
        if (*sweep_cmd)
            return cmd_sweep(require_manifest(sw_args.resolve()), sw_axis, sw_values);
        if (*exportft)
            return cmd_export_finetune(require_manifest(ft_args.resolve()), ft_split, ft_out);
        if (*report) return cmd_report(report_dir, report_bins);
        std::cerr << "tef: no command\n";
        return 2;
    } catch (const ReplayMissError& e) {
        std::cerr << "tef: " << e.what() << '\n';
        return 3;
    } catch (const TransportError& e) {
        std::cerr << "tef: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "tef: " << e.what() << '\n';
        return 2;
    }
}
