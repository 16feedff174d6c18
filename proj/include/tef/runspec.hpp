#pragma once
// The run specification: one declarative document that closes over an entire
// experiment — dataset manifest, question bank (stored or sampled), the
// experiment knobs, the gateway backend, and the output directory. The fully
// resolved spec is echoed into every run directory, so any result can be
// reproduced from that echo alone.

#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "tef/evaluation.hpp"
#include "tef/gateway.hpp"
#include "tef/question_bank.hpp"

namespace tef {

// ---------------------------------------------------------------------------
// Backend selection

enum class Backend { scripted, live, record, replay };

inline const char* to_string(Backend b) {
    switch (b) {
        case Backend::scripted: return "scripted";
        case Backend::live: return "live";
        case Backend::record: return "record";
        case Backend::replay: return "replay";
    }
    return "?";
}

inline Backend backend_from_string(const std::string& s) {
    if (s == "scripted") return Backend::scripted;
    if (s == "live") return Backend::live;
    if (s == "record") return Backend::record;
    if (s == "replay") return Backend::replay;
    throw ConfigError("unknown backend \"" + s + "\"");
}

inline ScriptedPolicy scripted_policy_from_string(const std::string& s) {
    if (s == "recency") return ScriptedPolicy::recency;
    if (s == "fixed-label") return ScriptedPolicy::fixed_label;
    if (s == "echo-candidates") return ScriptedPolicy::echo_candidates;
    if (s == "scripted-map") return ScriptedPolicy::scripted_map;
    throw ConfigError("unknown scripted policy \"" + s + "\"");
}

// ---------------------------------------------------------------------------
// RunSpec

struct RunSpec {
    std::filesystem::path manifest;   // dataset manifest.json
    std::filesystem::path bank_path;  // load the bank from here when set...
    SplitName bank_split{SplitName::test};  // ...else sample over this split
    ExperimentConfig experiment;      // task, strategy, bank_seed, history, ...
    Backend backend{Backend::scripted};
    ScriptedPolicy scripted_policy{ScriptedPolicy::recency};
    char scripted_label{'A'};
    std::string record_transport{"scripted"};  // "scripted" | "live"
    std::filesystem::path cache_path;          // replay cache (record/replay)
    std::filesystem::path out_dir;
    int max_in_flight{4};
    int max_retries{5};
    int retry_base_ms{250};
    double rate_per_sec{0.0};
    int sparsity_bins{4};

    bool operator==(const RunSpec&) const = default;
};

/// Bank sampling parameters are a projection of the run spec, so the same
/// seed and strategy govern both building and answering.
inline BankConfig bank_config_of(const RunSpec& s) {
    BankConfig b;
    b.task = s.experiment.task;
    b.strategy = s.experiment.strategy;
    b.seed = s.experiment.bank_seed;
    b.split = s.bank_split;
    b.max_questions = s.experiment.max_questions;
    return b;
}

inline void check_runspec(const RunSpec& s) {
    check_experiment_config(s.experiment);
    if (s.backend == Backend::record || s.backend == Backend::replay) {
        if (s.cache_path.empty())
            throw ConfigError(std::string(to_string(s.backend)) +
                              " backend needs a cache path");
    }
    if (s.backend == Backend::replay && !std::filesystem::exists(s.cache_path))
        throw ConfigError("replay backend needs an existing cache: " + s.cache_path.string());
    if (s.record_transport != "scripted" && s.record_transport != "live")
        throw ConfigError("record_transport must be \"scripted\" or \"live\", got \"" +
                          s.record_transport + "\"");
    if (s.scripted_label < 'A' || s.scripted_label > 'F')
        throw ConfigError("scripted label must be A..F");
    if (s.max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
    if (s.max_retries < 0) throw ConfigError("max_retries must be >= 0");
    if (s.retry_base_ms < 0) throw ConfigError("retry_base_ms must be >= 0");
    if (s.rate_per_sec < 0) throw ConfigError("rate_per_sec must be >= 0");
    if (s.sparsity_bins < 1) throw ConfigError("sparsity_bins must be >= 1");
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json runspec_to_json(const RunSpec& s) {
    return nlohmann::json{
        {"manifest", s.manifest.string()},
        {"bank_path", s.bank_path.string()},
        {"bank_split", to_string(s.bank_split)},
        {"experiment", config_to_json(s.experiment)},
        {"backend", to_string(s.backend)},
        {"scripted", {{"policy", to_string(s.scripted_policy)},
                      {"label", std::string(1, s.scripted_label)}}},
        {"record_transport", s.record_transport},
        {"cache_path", s.cache_path.string()},
        {"out_dir", s.out_dir.string()},
        {"gateway", {{"max_in_flight", s.max_in_flight},
                     {"max_retries", s.max_retries},
                     {"retry_base_ms", s.retry_base_ms},
                     {"rate_per_sec", s.rate_per_sec}}},
        {"sparsity_bins", s.sparsity_bins}};
}

/// Parse a spec document. Every field is optional and falls back to the
/// defaults, so a file may state only what it cares about; unknown keys are
/// rejected to catch typos.
inline RunSpec runspec_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known{
        "manifest", "bank_path",        "bank_split", "experiment",    "backend",
        "scripted", "record_transport", "cache_path", "out_dir",       "gateway",
        "sparsity_bins"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key)) throw ConfigError("unknown run spec key \"" + key + "\"");
    }

    RunSpec s;
    s.manifest = j.value("manifest", std::string{});
    s.bank_path = j.value("bank_path", std::string{});
    if (j.contains("bank_split"))
        s.bank_split = split_from_string(j["bank_split"].get<std::string>());
    if (j.contains("experiment")) {
        // Overlay the given fields onto the defaults so partial documents work.
        nlohmann::json merged = config_to_json(ExperimentConfig{});
        for (const auto& [key, value] : j["experiment"].items()) {
            if (key == "history" && merged.contains("history")) {
                for (const auto& [hk, hv] : value.items()) merged["history"][hk] = hv;
            } else {
                merged[key] = value;
            }
        }
        s.experiment = config_from_json(merged);
    }
    if (j.contains("backend")) s.backend = backend_from_string(j["backend"].get<std::string>());
    if (j.contains("scripted")) {
        const auto& sc = j["scripted"];
        if (sc.contains("policy"))
            s.scripted_policy = scripted_policy_from_string(sc["policy"].get<std::string>());
        if (sc.contains("label")) {
            std::string label = sc["label"].get<std::string>();
            if (label.size() != 1) throw ConfigError("scripted label must be one letter");
            s.scripted_label = label[0];
        }
    }
    s.record_transport = j.value("record_transport", s.record_transport);
    s.cache_path = j.value("cache_path", std::string{});
    s.out_dir = j.value("out_dir", std::string{});
    if (j.contains("gateway")) {
        const auto& g = j["gateway"];
        s.max_in_flight = g.value("max_in_flight", s.max_in_flight);
        s.max_retries = g.value("max_retries", s.max_retries);
        s.retry_base_ms = g.value("retry_base_ms", s.retry_base_ms);
        s.rate_per_sec = g.value("rate_per_sec", s.rate_per_sec);
    }
    s.sparsity_bins = j.value("sparsity_bins", s.sparsity_bins);
    return s;
}

inline RunSpec load_runspec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open run spec " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("run spec " + path.string() + ": " + e.what());
    }
    try {
        return runspec_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("run spec " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Gateway construction

namespace detail {

/// Transport + config the spec asks for. `record` wraps the scripted
/// transport unless record_transport is "live", so recording needs no network
/// by default; `replay` needs no transport at all.
inline std::pair<std::unique_ptr<Transport>, GatewayConfig> gateway_parts(const RunSpec& s) {
    GatewayConfig g;
    if (!s.experiment.model_id.empty()) g.model_id = s.experiment.model_id;
    g.max_in_flight = s.max_in_flight;
    g.max_retries = s.max_retries;
    g.retry_base_ms = s.retry_base_ms;
    g.rate_per_sec = s.rate_per_sec;

    auto scripted = [&]() -> std::unique_ptr<Transport> {
        ScriptedConfig sc;
        sc.policy = s.scripted_policy;
        sc.fixed_label = s.scripted_label;
        return std::make_unique<ScriptedTransport>(sc);
    };
    auto live = [&]() -> std::unique_ptr<Transport> {
#ifdef TEF_ENABLE_HTTP
        return HttpTransport::from_env();
#else
        throw ConfigError("this build has no live transport; rebuild with TEF_ENABLE_HTTP");
#endif
    };

    switch (s.backend) {
        case Backend::scripted: return {scripted(), std::move(g)};
        case Backend::live: return {live(), std::move(g)};
        case Backend::record:
            g.cache_mode = CacheMode::record;
            g.cache_path = s.cache_path;
            return {s.record_transport == "live" ? live() : scripted(), std::move(g)};
        case Backend::replay:
            g.cache_mode = CacheMode::replay;
            g.cache_path = s.cache_path;
            return {nullptr, std::move(g)};
    }
    throw ConfigError("unknown backend");
}

}  // namespace detail

inline Gateway make_gateway(const RunSpec& s) {
    auto [transport, config] = detail::gateway_parts(s);
    return Gateway(std::move(transport), std::move(config));
}

/// As make_gateway, for callers that construct the gateway conditionally
/// (Gateway itself is neither movable nor copyable).
inline std::unique_ptr<Gateway> make_gateway_ptr(const RunSpec& s) {
    auto [transport, config] = detail::gateway_parts(s);
    return std::make_unique<Gateway>(std::move(transport), std::move(config));
}

/// Load the bank named by the spec, checking it matches the dataset task, or
/// sample a fresh one. Sampling with the generated strategy requires the
/// gateway.
inline std::vector<McqInstance> obtain_bank(const Dataset& ds, const RunSpec& s,
                                            Gateway* gateway) {
    if (!s.bank_path.empty()) {
        LoadedBank loaded = load_question_bank(s.bank_path);
        if (loaded.config.task != s.experiment.task)
            throw ConfigError("bank " + s.bank_path.string() + " was built for the " +
                              std::string(to_string(loaded.config.task)) + " task");
        return std::move(loaded.questions);
    }
    return build_question_bank(ds, bank_config_of(s), gateway);
}

}  // namespace tef
