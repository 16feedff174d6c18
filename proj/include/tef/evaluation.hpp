#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tef/history.hpp"
#include "tef/prompting.hpp"
#include "tef/question_bank.hpp"

namespace tef {

// ---------------------------------------------------------------------------
// Enum parsing (shared by the sweep axes and the CLI)

inline Task task_from_string(const std::string& s) {
    if (s == "object") return Task::object_prediction;
    if (s == "relation") return Task::relation_prediction;
    throw ConfigError("unknown task \"" + s + "\" (expected object|relation)");
}

inline HistoryMode history_mode_from_string(const std::string& s) {
    if (s == "rule") return HistoryMode::rule;
    if (s == "retrieved") return HistoryMode::retrieved;
    if (s == "none") return HistoryMode::none;
    throw ConfigError("unknown history mode \"" + s + "\" (expected rule|retrieved|none)");
}

inline HistoryFormat history_format_from_string(const std::string& s) {
    if (s == "graph") return HistoryFormat::graph;
    if (s == "text") return HistoryFormat::text;
    if (s == "mixed") return HistoryFormat::mixed;
    throw ConfigError("unknown history format \"" + s + "\" (expected graph|text|mixed)");
}

inline ScopeKind scope_from_string(const std::string& s) {
    if (s == "none") return ScopeKind::none;
    if (s == "global") return ScopeKind::global;
    if (s == "complex-event") return ScopeKind::complex_event;
    throw ConfigError("unknown scope \"" + s + "\" (expected none|global|complex-event)");
}

inline RetrieverKind retriever_from_string(const std::string& s) {
    if (s == "bm25") return RetrieverKind::bm25;
    if (s == "dense") return RetrieverKind::dense;
    throw ConfigError("unknown retriever \"" + s + "\" (expected bm25|dense)");
}

inline SplitName split_from_string(const std::string& s) {
    if (s == "train") return SplitName::train;
    if (s == "val") return SplitName::val;
    if (s == "test") return SplitName::test;
    throw ConfigError("unknown split \"" + s + "\" (expected train|val|test)");
}

// ---------------------------------------------------------------------------
// Types

struct ExperimentConfig {
    Task task{Task::object_prediction};
    HistoryConfig history;
    Strategy strategy{Strategy::history};  // how the bank's options were sampled
    std::uint64_t bank_seed{0};
    std::string model_id;  // label recorded in outputs; the gateway holds the real one
    std::size_t max_questions{0};
    std::size_t workers{0};  // 0 = min(hardware threads, gateway in-flight limit)

    bool operator==(const ExperimentConfig&) const = default;
};

inline void check_experiment_config(const ExperimentConfig& c) {
    check_history_config(c.history);
    if (c.history.mode == HistoryMode::none && c.history.format != HistoryFormat::graph)
        throw ConfigError("history mode none takes no format-specific parameters");
}

struct QuestionRecord {
    std::int64_t question_id{0};  // the generating event id
    std::string predicted;        // "A".."F", empty when invalid
    std::string gold;             // "A".."F"
    bool correct{false};
    bool invalid{false};
    std::size_t history_events{0};
    std::size_t history_texts{0};
    bool cache_hit{false};
    double latency_ms{0};  // wall-clock; persisted separately from the stable record
    std::string error;     // transport failure detail when invalid for that reason

    bool operator==(const QuestionRecord&) const = default;
};

struct ExperimentResult {
    ExperimentConfig config;
    std::vector<QuestionRecord> records;  // sorted by question_id
    double accuracy{0};
    double invalid_rate{0};
};

// ---------------------------------------------------------------------------
// Accuracy

/// Correct / total, invalids counted incorrect. Empty input is an error.
inline double compute_accuracy(const std::vector<QuestionRecord>& records) {
    if (records.empty()) throw DomainError("cannot compute accuracy over zero records");
    std::size_t correct = 0;
    for (const auto& r : records) correct += r.correct ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(records.size());
}

inline double compute_invalid_rate(const std::vector<QuestionRecord>& records) {
    if (records.empty()) throw DomainError("cannot compute invalid rate over zero records");
    std::size_t invalid = 0;
    for (const auto& r : records) invalid += r.invalid ? 1 : 0;
    return static_cast<double>(invalid) / static_cast<double>(records.size());
}

// ---------------------------------------------------------------------------
// run_experiment

/// Answer every question in the bank: build its history, render the prompt,
/// ask the gateway, parse the choice. Questions run concurrently up to the
/// gateway's in-flight limit. A replay miss aborts the run naming the
/// question; per-question transport failures become invalid records.
inline ExperimentResult run_experiment(const Dataset& ds, const std::vector<McqInstance>& bank,
                                       const ExperimentConfig& config, Gateway& gateway,
                                       const TemplateSet& templates = {}) {
    check_experiment_config(config);
    std::size_t n = bank.size();
    if (config.max_questions && config.max_questions < n) n = config.max_questions;
    if (n == 0) throw DomainError("cannot run an experiment over an empty question bank");

    PromptTemplate tmpl = templates.forecast(config.history.mode, config.history.format,
                                             config.task, config.history.scope);

    std::vector<QuestionRecord> records(n);
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::mutex err_mu;
    std::exception_ptr first_error;

    auto fail = [&](std::exception_ptr e) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::move(e);
        stop.store(true);
    };

    auto work = [&] {
        while (!stop.load()) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) break;
            const McqInstance& m = bank[i];
            QuestionRecord rec;
            rec.question_id = m.query.event_id.value;
            rec.gold = std::string(1, m.gold_label());
            try {
                auto t0 = std::chrono::steady_clock::now();
                HistoryBundle bundle = build_history(ds, m.query, config.history, &gateway);
                auto options = m.option_texts();
                RenderedPrompt prompt =
                    render_prompt(tmpl, make_query_view(ds, m.query), bundle, options);
                ChatOutcome reply = gateway.chat_complete_ex(prompt.text);
                rec.latency_ms = std::chrono::duration<double, std::milli>(
                                     std::chrono::steady_clock::now() - t0)
                                     .count();
                rec.cache_hit = reply.cache_hit;
                rec.history_events = bundle.event_count();
                rec.history_texts = bundle.text_count();
                ChoiceResult choice = parse_choice(reply.text, options);
                if (choice.valid()) {
                    rec.predicted = std::string(1, choice.label());
                    rec.correct = *choice.index == m.gold_index;
                } else {
                    rec.invalid = true;
                }
            } catch (const ReplayMissError& e) {
                fail(std::make_exception_ptr(ReplayMissError(
                    e.key, "question " + std::to_string(rec.question_id))));
                break;
            } catch (const TransportError& e) {
                rec.invalid = true;
                rec.error = e.what();
            } catch (...) {
                fail(std::current_exception());
                break;
            }
            records[i] = std::move(rec);
        }
    };

    std::size_t workers = config.workers;
    if (workers == 0) {
        std::size_t hw = std::thread::hardware_concurrency();
        workers = std::min<std::size_t>(hw ? hw : 1,
                                        static_cast<std::size_t>(gateway.config().max_in_flight));
    }
    workers = std::max<std::size_t>(1, std::min(workers, n));

    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    std::sort(records.begin(), records.end(),
              [](const QuestionRecord& a, const QuestionRecord& b) {
                  return a.question_id < b.question_id;
              });

    ExperimentResult result;
    result.config = config;
    result.records = std::move(records);
    result.accuracy = compute_accuracy(result.records);
    result.invalid_rate = compute_invalid_rate(result.records);
    return result;
}

// ---------------------------------------------------------------------------
// Sparsity breakdown

struct SparsityGroup {
    std::string label;   // "lo-hi" over the group's frequency bounds
    std::int64_t lo{0};  // inclusive frequency bounds of the bin
    std::int64_t hi{0};
    std::size_t count{0};
    std::size_t correct{0};
    double accuracy{0};

    bool operator==(const SparsityGroup&) const = default;
};

struct SparsityBreakdown {
    std::vector<SparsityGroup> groups;
    std::vector<std::int64_t> edges;  // upper bin edges actually used
    std::string measure{"gold-object train-split frequency"};
    std::vector<std::string> warnings;
};

/// Bin the questions by how often their gold object occurs in the train
/// split, at quantile edges (or explicit ones), and report per-bin accuracy.
/// Frequencies always come from the train split to keep the measure free of
/// test-time information.
inline SparsityBreakdown sparsity_breakdown(const ExperimentResult& result, const Dataset& ds,
                                            int bins = 4,
                                            const std::vector<std::int64_t>* explicit_edges =
                                                nullptr) {
    if (result.records.empty()) throw DomainError("cannot bin zero records");
    if (bins < 1) throw ConfigError("sparsity breakdown needs at least one bin");
    if (!ds.splits()) throw DomainError("sparsity breakdown needs a dataset with splits");

    // Train-split occurrence count per object entity.
    std::unordered_map<std::int64_t, std::int64_t> train_freq;
    for (const AtomicEvent* e : ds.events_in_split(SplitName::train))
        ++train_freq[e->object.value];

    // The gold object of a question is the object of its generating event.
    std::unordered_map<std::int64_t, std::int64_t> event_object;
    ds.for_each_event(
        [&](const AtomicEvent& e) { event_object[e.id.value] = e.object.value; });

    std::vector<std::int64_t> freqs;
    freqs.reserve(result.records.size());
    for (const auto& r : result.records) {
        auto it = event_object.find(r.question_id);
        if (it == event_object.end())
            throw DomainError("question " + std::to_string(r.question_id) +
                              " has no generating event in the dataset");
        auto f = train_freq.find(it->second);
        freqs.push_back(f == train_freq.end() ? 0 : f->second);
    }

    SparsityBreakdown out;
    std::vector<std::int64_t> edges;
    if (explicit_edges) {
        edges = *explicit_edges;
        if (edges.empty()) throw ConfigError("explicit sparsity edges must be non-empty");
        if (!std::is_sorted(edges.begin(), edges.end()))
            throw ConfigError("explicit sparsity edges must be ascending");
        std::int64_t max_f = *std::max_element(freqs.begin(), freqs.end());
        if (edges.back() < max_f) edges.push_back(max_f);
    } else {
        std::vector<std::int64_t> sorted = freqs;
        std::sort(sorted.begin(), sorted.end());
        std::size_t nq = sorted.size();
        for (int k = 1; k < bins; ++k) {
            std::size_t idx = (nq * static_cast<std::size_t>(k) + bins - 1) /
                                  static_cast<std::size_t>(bins) -
                              1;
            edges.push_back(sorted[std::min(idx, nq - 1)]);
        }
        edges.push_back(sorted.back());
        auto last = std::unique(edges.begin(), edges.end());
        if (last != edges.end()) {
            edges.erase(last, edges.end());
            out.warnings.push_back("merged bins: only " + std::to_string(edges.size()) +
                                   " of " + std::to_string(bins) +
                                   " bins are distinguishable at these frequencies");
        }
    }
    out.edges = edges;

    out.groups.resize(edges.size());
    for (std::size_t g = 0; g < edges.size(); ++g) {
        out.groups[g].lo = g == 0 ? 0 : edges[g - 1] + 1;
        out.groups[g].hi = edges[g];
        out.groups[g].label = std::to_string(out.groups[g].lo) + "-" +
                              std::to_string(out.groups[g].hi);
    }
    for (std::size_t i = 0; i < result.records.size(); ++i) {
        std::size_t g = static_cast<std::size_t>(
            std::lower_bound(edges.begin(), edges.end(), freqs[i]) - edges.begin());
        if (g >= out.groups.size()) g = out.groups.size() - 1;  // above explicit top edge
        ++out.groups[g].count;
        if (result.records[i].correct) ++out.groups[g].correct;
    }
    for (auto& grp : out.groups)
        grp.accuracy = grp.count == 0
                           ? 0.0
                           : static_cast<double>(grp.correct) / static_cast<double>(grp.count);
    return out;
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepAxis { history_length, horizon, scope, retriever, strategy, format };

inline const char* to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::history_length: return "history_length";
        case SweepAxis::horizon: return "horizon";
        case SweepAxis::scope: return "scope";
        case SweepAxis::retriever: return "retriever";
        case SweepAxis::strategy: return "strategy";
        case SweepAxis::format: return "format";
    }
    return "?";
}

inline SweepAxis sweep_axis_from_string(const std::string& s) {
    if (s == "history_length") return SweepAxis::history_length;
    if (s == "horizon") return SweepAxis::horizon;
    if (s == "scope") return SweepAxis::scope;
    if (s == "retriever") return SweepAxis::retriever;
    if (s == "strategy") return SweepAxis::strategy;
    if (s == "format") return SweepAxis::format;
    throw ConfigError("unknown sweep axis \"" + s + "\"");
}

inline std::vector<std::string> default_axis_values(SweepAxis a) {
    switch (a) {
        case SweepAxis::history_length: return {"3", "7", "15", "30", "90"};
        case SweepAxis::horizon: {
            std::vector<std::string> v;
            for (int d = 1; d <= 14; ++d) v.push_back(std::to_string(d));
            return v;
        }
        case SweepAxis::scope: return {"none", "global", "complex-event"};
        case SweepAxis::retriever: return {"bm25", "dense"};
        case SweepAxis::strategy: return {"history", "global", "generated"};
        case SweepAxis::format: return {"graph", "text", "mixed"};
    }
    return {};
}

namespace detail {

inline std::int64_t parse_int_value(const std::string& v, const char* what) {
    try {
        std::size_t used = 0;
        std::int64_t out = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(std::string("invalid ") + what + " value \"" + v + "\"");
    }
}

}  // namespace detail

/// The base config with one axis repointed at `value`.
inline ExperimentConfig apply_axis(ExperimentConfig base, SweepAxis axis,
                                   const std::string& value) {
    switch (axis) {
        case SweepAxis::history_length:
            base.history.history_length_days = detail::parse_int_value(value, "history length");
            break;
        case SweepAxis::horizon:
            base.history.horizon_days = detail::parse_int_value(value, "horizon");
            break;
        case SweepAxis::scope: base.history.scope = scope_from_string(value); break;
        case SweepAxis::retriever: base.history.retriever = retriever_from_string(value); break;
        case SweepAxis::strategy: base.strategy = strategy_from_string(value); break;
        case SweepAxis::format: base.history.format = history_format_from_string(value); break;
    }
    return base;
}

struct SweepRow {
    std::string axis_value;
    double accuracy{0};
    double invalid_rate{0};
    std::size_t n{0};

    bool operator==(const SweepRow&) const = default;
};

struct SweepTable {
    SweepAxis axis{SweepAxis::history_length};
    std::vector<SweepRow> rows;
    bool partial{false};
    std::string error;
};

/// One run_experiment per axis value over the same frozen bank (the strategy
/// axis rebuilds the bank with the same seed, so the question set — though
/// not its options — stays identical). On error the completed rows are
/// stored in *partial_out (when given) and the error rethrown.
inline SweepTable sweep(const Dataset& ds, const std::vector<McqInstance>& bank,
                        const ExperimentConfig& base, SweepAxis axis,
                        const std::vector<std::string>& values, Gateway& gateway,
                        const TemplateSet& templates = {},
                        const BankConfig* bank_cfg = nullptr,
                        SweepTable* partial_out = nullptr) {
    SweepTable table;
    table.axis = axis;
    if (values.empty()) throw ConfigError("sweep needs at least one axis value");
    try {
        for (const auto& v : values) {
            ExperimentConfig cfg = apply_axis(base, axis, v);
            const std::vector<McqInstance>* questions = &bank;
            std::vector<McqInstance> rebuilt;
            if (axis == SweepAxis::strategy) {
                if (!bank_cfg)
                    throw ConfigError("the strategy sweep needs the bank configuration "
                                      "to rebuild option sets");
                BankConfig bc = *bank_cfg;
                bc.strategy = cfg.strategy;
                rebuilt = build_question_bank(ds, bc, &gateway);
                questions = &rebuilt;
            }
            ExperimentResult res = run_experiment(ds, *questions, cfg, gateway, templates);
            table.rows.push_back(
                SweepRow{v, res.accuracy, res.invalid_rate, res.records.size()});
        }
    } catch (...) {
        table.partial = true;
        try {
            throw;
        } catch (const std::exception& e) {
            table.error = e.what();
        } catch (...) {
            table.error = "unknown error";
        }
        if (partial_out) *partial_out = table;
        throw;
    }
    return table;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    const auto& h = c.history;
    return nlohmann::json{{"task", to_string(c.task)},
                          {"strategy", to_string(c.strategy)},
                          {"bank_seed", c.bank_seed},
                          {"model_id", c.model_id},
                          {"max_questions", c.max_questions},
                          {"workers", c.workers},
                          {"history",
                           {{"mode", to_string(h.mode)},
                            {"format", to_string(h.format)},
                            {"scope", to_string(h.scope)},
                            {"retriever", to_string(h.retriever)},
                            {"history_length_days", h.history_length_days},
                            {"local_window_days", h.local_window_days},
                            {"candidate_window_days", h.candidate_window_days},
                            {"text_window_days", h.text_window_days},
                            {"horizon_days", h.horizon_days},
                            {"top_k_related", h.top_k_related},
                            {"max_events", h.max_events},
                            {"max_texts", h.max_texts},
                            {"chunk_tokens", h.chunk_tokens},
                            {"chunk_overlap", h.chunk_overlap},
                            {"top_n_chunks", h.top_n_chunks},
                            {"summary_max_tokens", h.summary_max_tokens}}}};
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.task = task_from_string(j.at("task").get<std::string>());
    c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    c.bank_seed = j.value("bank_seed", std::uint64_t{0});
    c.model_id = j.value("model_id", std::string{});
    c.max_questions = j.value("max_questions", std::size_t{0});
    c.workers = j.value("workers", std::size_t{0});
    if (j.contains("history")) {
        const auto& h = j["history"];
        auto& hc = c.history;
        hc.mode = history_mode_from_string(h.value("mode", std::string("rule")));
        hc.format = history_format_from_string(h.value("format", std::string("graph")));
        hc.scope = scope_from_string(h.value("scope", std::string("complex-event")));
        hc.retriever = retriever_from_string(h.value("retriever", std::string("bm25")));
        hc.history_length_days = h.value("history_length_days", hc.history_length_days);
        hc.local_window_days = h.value("local_window_days", hc.local_window_days);
        hc.candidate_window_days = h.value("candidate_window_days", hc.candidate_window_days);
        hc.text_window_days = h.value("text_window_days", hc.text_window_days);
        hc.horizon_days = h.value("horizon_days", hc.horizon_days);
        hc.top_k_related = h.value("top_k_related", hc.top_k_related);
        hc.max_events = h.value("max_events", hc.max_events);
        hc.max_texts = h.value("max_texts", hc.max_texts);
        hc.chunk_tokens = h.value("chunk_tokens", hc.chunk_tokens);
        hc.chunk_overlap = h.value("chunk_overlap", hc.chunk_overlap);
        hc.top_n_chunks = h.value("top_n_chunks", hc.top_n_chunks);
        hc.summary_max_tokens = h.value("summary_max_tokens", hc.summary_max_tokens);
    }
    return c;
}

/// Stable per-question record: everything except wall-clock latency, which
/// goes to its own file so result files are byte-reproducible under replay.
inline nlohmann::json record_to_json(const QuestionRecord& r) {
    nlohmann::json j{{"question_id", r.question_id}, {"predicted", r.predicted},
                     {"gold", r.gold},               {"correct", r.correct},
                     {"invalid", r.invalid},         {"history_events", r.history_events},
                     {"history_texts", r.history_texts}, {"cache_hit", r.cache_hit}};
    if (!r.error.empty()) j["error"] = r.error;
    return j;
}

inline QuestionRecord record_from_json(const nlohmann::json& j) {
    QuestionRecord r;
    r.question_id = j.at("question_id").get<std::int64_t>();
    r.predicted = j.at("predicted").get<std::string>();
    r.gold = j.at("gold").get<std::string>();
    r.correct = j.at("correct").get<bool>();
    r.invalid = j.at("invalid").get<bool>();
    r.history_events = j.at("history_events").get<std::size_t>();
    r.history_texts = j.at("history_texts").get<std::size_t>();
    r.cache_hit = j.at("cache_hit").get<bool>();
    r.error = j.value("error", std::string{});
    return r;
}

inline void save_records(const std::filesystem::path& path, const ExperimentResult& result) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write records " + path.string());
    for (const auto& r : result.records) out << record_to_json(r).dump() << '\n';
}

inline std::vector<QuestionRecord> load_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open records " + path.string());
    std::vector<QuestionRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string(), lineno, e.what());
        }
    }
    return out;
}

inline void save_latencies(const std::filesystem::path& path, const ExperimentResult& result) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write latencies " + path.string());
    for (const auto& r : result.records) {
        nlohmann::json j{{"question_id", r.question_id}, {"latency_ms", r.latency_ms}};
        out << j.dump() << '\n';
    }
}

inline nlohmann::json summary_to_json(const ExperimentResult& result) {
    std::size_t correct = 0, invalid = 0;
    for (const auto& r : result.records) {
        correct += r.correct ? 1 : 0;
        invalid += r.invalid ? 1 : 0;
    }
    return nlohmann::json{{"n", result.records.size()},
                          {"correct", correct},
                          {"invalid", invalid},
                          {"accuracy", result.accuracy},
                          {"invalid_rate", result.invalid_rate},
                          {"config", config_to_json(result.config)}};
}

inline nlohmann::json breakdown_to_json(const SparsityBreakdown& b) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : b.groups)
        groups.push_back(nlohmann::json{{"label", g.label},
                                        {"lo", g.lo},
                                        {"hi", g.hi},
                                        {"n", g.count},
                                        {"correct", g.correct},
                                        {"accuracy", g.accuracy}});
    return nlohmann::json{{"measure", b.measure},
                          {"edges", b.edges},
                          {"groups", std::move(groups)},
                          {"warnings", b.warnings}};
}

inline std::string breakdown_to_csv(const SparsityBreakdown& b) {
    std::string out = "label,lo,hi,n,correct,accuracy\n";
    char buf[160];
    for (const auto& g : b.groups) {
        std::snprintf(buf, sizeof(buf), "%s,%lld,%lld,%zu,%zu,%.6f\n", g.label.c_str(),
                      static_cast<long long>(g.lo), static_cast<long long>(g.hi), g.count,
                      g.correct, g.accuracy);
        out += buf;
    }
    return out;
}

inline std::string sweep_to_csv(const SweepTable& t) {
    std::string out = "axis_value,accuracy,invalid_rate,n\n";
    char buf[160];
    for (const auto& r : t.rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%zu\n", r.axis_value.c_str(), r.accuracy,
                      r.invalid_rate, r.n);
        out += buf;
    }
    return out;
}

}  // namespace tef
