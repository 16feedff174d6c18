#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "tef/core.hpp"
#include "tef/error.hpp"
#include "tef/gateway.hpp"
#include "tef/history_types.hpp"
#include "tef/prompting.hpp"
#include "tef/rng.hpp"
#include "tef/text.hpp"

namespace tef {

// ---------------------------------------------------------------------------
// Types

enum class Strategy { history, global, generated };

inline const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::history: return "history";
        case Strategy::global: return "global";
        case Strategy::generated: return "generated";
    }
    return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "history") return Strategy::history;
    if (s == "global") return Strategy::global;
    if (s == "generated") return Strategy::generated;
    throw ConfigError("unknown strategy \"" + s + "\" (expected history|global|generated)");
}

/// Where an option came from: the gold answer, one of the history sampling
/// pools, the global vocabulary, the generator model, or backfill taken from
/// a later pool because an earlier one ran dry.
enum class OptionSource { gold, ce_t1, ce_t2, gq, global, generated, backfill };

inline const char* to_string(OptionSource s) {
    switch (s) {
        case OptionSource::gold: return "gold";
        case OptionSource::ce_t1: return "t-1";
        case OptionSource::ce_t2: return "t-2";
        case OptionSource::gq: return "Gq";
        case OptionSource::global: return "global";
        case OptionSource::generated: return "generated";
        case OptionSource::backfill: return "backfill";
    }
    return "?";
}

inline OptionSource option_source_from_string(const std::string& s) {
    if (s == "gold") return OptionSource::gold;
    if (s == "t-1") return OptionSource::ce_t1;
    if (s == "t-2") return OptionSource::ce_t2;
    if (s == "Gq") return OptionSource::gq;
    if (s == "global") return OptionSource::global;
    if (s == "generated") return OptionSource::generated;
    if (s == "backfill") return OptionSource::backfill;
    throw ParseError("unknown option source \"" + s + "\"");
}

struct Option {
    std::string text;
    OptionSource source{OptionSource::global};

    bool operator==(const Option&) const = default;
};

struct McqInstance {
    Query query;
    std::vector<Option> options;  // exactly 6, labels A..F by position
    int gold_index{0};
    Strategy strategy{Strategy::history};
    std::uint64_t rng_seed{0};

    bool operator==(const McqInstance&) const = default;

    char gold_label() const { return static_cast<char>('A' + gold_index); }
    const std::string& gold_text() const { return options[gold_index].text; }
    std::vector<std::string> option_texts() const {
        std::vector<std::string> out;
        out.reserve(options.size());
        for (const auto& o : options) out.push_back(o.text);
        return out;
    }
};

inline void check_mcq(const McqInstance& m) {
    if (m.options.size() != 6) throw DomainError("an MCQ must carry exactly 6 options");
    if (m.gold_index < 0 || m.gold_index >= 6)
        throw DomainError("MCQ gold index out of range");
    std::unordered_set<std::string> seen;
    int gold_count = 0;
    for (const auto& o : m.options) {
        if (!seen.insert(text::canonical(o.text)).second)
            throw DomainError("MCQ options must be pairwise distinct: \"" + o.text + "\"");
        if (o.source == OptionSource::gold) ++gold_count;
    }
    if (gold_count != 1 || m.options[m.gold_index].source != OptionSource::gold)
        throw DomainError("the gold option must appear exactly once, at the gold index");
    check_query(m.query);
}

// ---------------------------------------------------------------------------
// Query construction

/// Hide the task's target field of a complete event.
inline Query make_query(const AtomicEvent& e, Task task) {
    Query q;
    q.event_id = e.id;
    q.subject = e.subject;
    q.t = e.t;
    q.complex_event = e.complex_event;
    q.task = task;
    if (task == Task::object_prediction)
        q.relation = e.relation;
    else
        q.object = e.object;
    return q;
}

/// The display string of the hidden field.
inline std::string gold_text_of(const Dataset& ds, const AtomicEvent& e, Task task) {
    return task == Task::object_prediction ? ds.entities().name_of(e.object)
                                           : ds.relations().name_of(e.relation);
}

inline QueryView make_query_view(const Dataset& ds, const Query& q) {
    QueryView v;
    v.subject = ds.entities().name_of(q.subject);
    if (q.relation) v.relation = ds.relations().name_of(*q.relation);
    if (q.object) v.object = ds.entities().name_of(*q.object);
    v.t = q.t;
    v.task = q.task;
    return v;
}

// ---------------------------------------------------------------------------
// Negative sampling

namespace detail {

/// Draw-without-replacement pool with canonical-string distinctness against
/// everything drawn so far.
class OptionPool {
public:
    explicit OptionPool(std::unordered_set<std::string>& taken) : taken_(taken) {}

    void offer(const std::string& name) {
        auto canon = text::canonical(name);
        if (taken_.count(canon) || staged_.count(canon)) return;
        staged_.insert(canon);
        names_.push_back(name);
    }

    std::size_t size() const { return names_.size(); }

    /// Draw up to `want` names uniformly; returns how many were drawn.
    std::size_t draw_into(std::vector<Option>& out, std::size_t want, OptionSource tag, Rng& rng) {
        std::size_t drawn = 0;
        while (drawn < want && !names_.empty()) {
            std::size_t i = static_cast<std::size_t>(rng.below(names_.size()));
            std::string name = std::move(names_[i]);
            names_.erase(names_.begin() + static_cast<std::ptrdiff_t>(i));
            taken_.insert(text::canonical(name));
            out.push_back(Option{std::move(name), tag});
            ++drawn;
        }
        return drawn;
    }

private:
    std::unordered_set<std::string>& taken_;  // canonical forms already used
    std::unordered_set<std::string> staged_;  // canonical forms in this pool
    std::vector<std::string> names_;
};

inline void require_vocab_size(const Dataset& ds, Task task) {
    std::size_t n = task == Task::object_prediction ? ds.entities().size()
                                                    : ds.relations().size();
    if (n < 6)
        throw DomainError("dataset too small for 6-option questions: only " + std::to_string(n) +
                          (task == Task::object_prediction ? " entities" : " relations"));
}

/// Names participating in same-CE events on exactly day `t`.
inline std::vector<std::string> ce_day_names(const Dataset& ds, const Query& q, RelativeDay t,
                                             Task task) {
    std::vector<std::string> out;
    for (const AtomicEvent* e : ds.events_of_ce(q.complex_event)) {
        if (e->t != t) continue;
        if (task == Task::object_prediction) {
            out.push_back(ds.entities().name_of(e->subject));
            out.push_back(ds.entities().name_of(e->object));
        } else {
            out.push_back(ds.relations().name_of(e->relation));
        }
    }
    return out;
}

/// Names from the subject's global history strictly before the query day.
/// The subject itself is excluded: it participates in every one of its own
/// events, so admitting it would make it a near-universal distractor.
inline std::vector<std::string> subject_history_names(const Dataset& ds, const Query& q,
                                                      Task task) {
    std::vector<std::string> out;
    for (const AtomicEvent* e : ds.events_of_subject(q.subject)) {
        if (e->t >= q.t) break;
        if (task == Task::object_prediction) {
            if (e->object != q.subject) out.push_back(ds.entities().name_of(e->object));
        } else {
            out.push_back(ds.relations().name_of(e->relation));
        }
    }
    return out;
}

inline std::vector<std::string> vocab_names(const Dataset& ds, Task task) {
    std::vector<std::string> out;
    if (task == Task::object_prediction) {
        for (EntityId id : ds.entities().ids()) out.push_back(ds.entities().name_of(id));
    } else {
        for (RelationId id : ds.relations().ids()) out.push_back(ds.relations().name_of(id));
    }
    return out;
}

}  // namespace detail

/// Prompt asking the model for distractors; `attempt` > 1 marks a re-ask so
/// retries are distinguishable (and separately cacheable).
inline std::string generated_distractor_prompt(const QueryView& view, const std::string& gold,
                                               int attempt = 1) {
    std::string what = view.task == Task::object_prediction
                           ? "objects that could plausibly complete the event"
                           : "relations that could plausibly link the subject and object";
    std::string p = "You are helping to build a multiple-choice forecasting question. "
                    "Propose 5 plausible but incorrect " + what +
                    ". Do not repeat the correct answer.\n\n"
                    "[Query]\n" + render_query_tuple(view) + "\n\n"
                    "[Correct Answer]\n" + gold + "\n\n"
                    "Answer with one candidate per line.\n";
    if (attempt > 1) p += "(attempt " + std::to_string(attempt) + ")\n";
    return p;
}

/// Five distractors for the query under the given strategy. All draws go
/// through `rng`, so the result is a pure function of (dataset, query, gold,
/// strategy, seed) — modulo the gateway for the generated strategy.
inline std::vector<Option> sample_negatives(const Dataset& ds, const Query& q,
                                            const std::string& gold, Strategy strategy, Rng& rng,
                                            Gateway* gateway = nullptr, int max_reasks = 3) {
    check_query(q);
    detail::require_vocab_size(ds, q.task);

    std::unordered_set<std::string> taken{text::canonical(gold)};
    std::vector<Option> out;

    auto global_backfill = [&](std::size_t want, OptionSource tag) {
        detail::OptionPool pool(taken);
        for (auto& n : detail::vocab_names(ds, q.task)) pool.offer(n);
        std::size_t got = pool.draw_into(out, want, tag, rng);
        if (got < want)
            throw DomainError("dataset too small: could not draw " + std::to_string(want) +
                              " distinct options from the global set");
    };

    switch (strategy) {
        case Strategy::global: {
            global_backfill(5, OptionSource::global);
            break;
        }
        case Strategy::history: {
            // Recipe: 2 from the context at t-1, 2 from t-2, 1 from the
            // subject's global history. A dry pool passes its deficit down
            // the ladder; such extra draws are tagged backfill.
            struct Stage {
                std::vector<std::string> names;
                std::size_t quota;
                OptionSource tag;
            };
            std::vector<Stage> stages = {
                {detail::ce_day_names(ds, q, q.t - 1, q.task), 2, OptionSource::ce_t1},
                {detail::ce_day_names(ds, q, q.t - 2, q.task), 2, OptionSource::ce_t2},
                {detail::subject_history_names(ds, q, q.task), 1, OptionSource::gq},
            };
            std::size_t deficit = 0;
            for (auto& stage : stages) {
                detail::OptionPool pool(taken);
                for (auto& n : stage.names) pool.offer(n);
                std::size_t own = pool.draw_into(out, stage.quota, stage.tag, rng);
                deficit += stage.quota - own;
                if (deficit > 0) deficit -= pool.draw_into(out, deficit, OptionSource::backfill, rng);
            }
            if (deficit > 0) global_backfill(deficit, OptionSource::backfill);
            break;
        }
        case Strategy::generated: {
            if (!gateway) throw ConfigError("generated strategy requires a gateway");
            QueryView view = make_query_view(ds, q);
            for (int attempt = 1; attempt <= 1 + max_reasks && out.size() < 5; ++attempt) {
                std::string reply =
                    gateway->chat_complete(generated_distractor_prompt(view, gold, attempt));
                detail::OptionPool pool(taken);
                std::size_t start = 0;
                while (start <= reply.size()) {
                    auto eol = reply.find('\n', start);
                    std::string line = text::trim(reply.substr(
                        start, (eol == std::string::npos ? reply.size() : eol) - start));
                    for (const char* bullet : {"- ", "* "})
                        if (line.rfind(bullet, 0) == 0) line = text::trim(line.substr(2));
                    if (!line.empty()) pool.offer(line);
                    if (eol == std::string::npos) break;
                    start = eol + 1;
                }
                pool.draw_into(out, 5 - out.size(), OptionSource::generated, rng);
            }
            if (out.size() < 5) global_backfill(5 - out.size(), OptionSource::backfill);
            break;
        }
    }
    return out;
}

/// Shuffle gold + distractors into a labeled 6-option question.
inline McqInstance assemble_mcq(const Query& q, const std::string& gold,
                                std::vector<Option> distractors, Rng& rng, Strategy strategy,
                                std::uint64_t rng_seed) {
    check_query(q);
    if (distractors.size() != 5)
        throw DomainError("assemble_mcq needs exactly 5 distractors, got " +
                          std::to_string(distractors.size()));
    McqInstance m;
    m.query = q;
    m.strategy = strategy;
    m.rng_seed = rng_seed;
    m.options.push_back(Option{gold, OptionSource::gold});
    for (auto& d : distractors) m.options.push_back(std::move(d));
    rng.shuffle(m.options);
    for (int i = 0; i < 6; ++i)
        if (m.options[static_cast<std::size_t>(i)].source == OptionSource::gold) m.gold_index = i;
    check_mcq(m);  // rejects duplicate / gold-colliding distractors
    return m;
}

// ---------------------------------------------------------------------------
// Bank construction and persistence

struct BankConfig {
    Task task{Task::object_prediction};
    Strategy strategy{Strategy::history};
    std::uint64_t seed{0};
    SplitName split{SplitName::test};
    std::size_t max_questions{0};  // 0 = all split events

    bool operator==(const BankConfig&) const = default;
};

/// One question per split event, in ascending (t, event id) order. Each
/// question draws from its own rng seeded by (bank seed, event id), so banks
/// are stable under subsetting and parallel construction.
inline std::vector<McqInstance> build_question_bank(const Dataset& ds, const BankConfig& cfg,
                                                    Gateway* gateway = nullptr) {
    if (!ds.splits()) throw DomainError("question bank needs a dataset with splits");
    detail::require_vocab_size(ds, cfg.task);
    std::vector<McqInstance> bank;
    for (const AtomicEvent* e : ds.events_in_split(cfg.split)) {
        if (cfg.max_questions && bank.size() == cfg.max_questions) break;
        Query q = make_query(*e, cfg.task);
        std::string gold = gold_text_of(ds, *e, cfg.task);
        std::uint64_t seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(e->id.value));
        Rng rng(seed);
        auto distractors = sample_negatives(ds, q, gold, cfg.strategy, rng, gateway);
        bank.push_back(assemble_mcq(q, gold, std::move(distractors), rng, cfg.strategy, seed));
    }
    return bank;
}

inline nlohmann::json mcq_to_json(const McqInstance& m) {
    nlohmann::json j;
    j["event_id"] = m.query.event_id.value;
    j["subject"] = m.query.subject.value;
    if (m.query.relation) j["relation"] = m.query.relation->value;
    if (m.query.object) j["object"] = m.query.object->value;
    j["t"] = m.query.t.days;
    j["complex_event"] = m.query.complex_event.value;
    j["task"] = to_string(m.query.task);
    nlohmann::json opts = nlohmann::json::array();
    nlohmann::json prov = nlohmann::json::array();
    for (const auto& o : m.options) {
        opts.push_back(o.text);
        prov.push_back(to_string(o.source));
    }
    j["options"] = std::move(opts);
    j["provenance"] = std::move(prov);
    j["gold_label"] = std::string(1, m.gold_label());
    j["strategy"] = to_string(m.strategy);
    j["rng_seed"] = m.rng_seed;
    return j;
}

inline McqInstance mcq_from_json(const nlohmann::json& j) {
    McqInstance m;
    m.query.event_id = EventId{j.at("event_id").get<std::int64_t>()};
    m.query.subject = EntityId{j.at("subject").get<std::int64_t>()};
    if (j.contains("relation")) m.query.relation = RelationId{j["relation"].get<std::int64_t>()};
    if (j.contains("object")) m.query.object = EntityId{j["object"].get<std::int64_t>()};
    m.query.t = RelativeDay{j.at("t").get<std::int64_t>()};
    m.query.complex_event = ComplexEventId{j.at("complex_event").get<std::int64_t>()};
    m.query.task = j.at("task").get<std::string>() == "relation" ? Task::relation_prediction
                                                                 : Task::object_prediction;
    auto opts = j.at("options");
    auto prov = j.at("provenance");
    if (opts.size() != prov.size())
        throw ParseError("options and provenance arrays must have equal length");
    for (std::size_t i = 0; i < opts.size(); ++i)
        m.options.push_back(Option{opts[i].get<std::string>(),
                                   option_source_from_string(prov[i].get<std::string>())});
    std::string label = j.at("gold_label").get<std::string>();
    if (label.size() != 1 || label[0] < 'A' || label[0] > 'F')
        throw ParseError("gold_label must be a single letter A..F");
    m.gold_index = label[0] - 'A';
    m.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    m.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    check_mcq(m);
    return m;
}

/// NDJSON persistence: one meta line, then one line per question. The file
/// carries no timestamps, so identical banks are byte-identical.
inline void save_question_bank(const std::filesystem::path& path,
                               const std::vector<McqInstance>& bank, const BankConfig& cfg,
                               const std::string& dataset_name = "") {
    std::ofstream out(path);
    if (!out) throw Error("cannot write question bank " + path.string());
    nlohmann::json meta{{"kind", "bank_meta"},
                        {"task", to_string(cfg.task)},
                        {"strategy", to_string(cfg.strategy)},
                        {"seed", cfg.seed},
                        {"split", to_string(cfg.split)},
                        {"dataset", dataset_name},
                        {"questions", bank.size()}};
    out << meta.dump() << '\n';
    for (const auto& m : bank) out << mcq_to_json(m).dump() << '\n';
}

struct LoadedBank {
    BankConfig config;
    std::string dataset_name;
    std::vector<McqInstance> questions;
};

inline LoadedBank load_question_bank(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open question bank " + path.string());
    LoadedBank bank;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string(), lineno, e.what());
        }
        try {
            if (j.contains("kind") && j["kind"] == "bank_meta") {
                bank.config.task = j.at("task").get<std::string>() == "relation"
                                       ? Task::relation_prediction
                                       : Task::object_prediction;
                bank.config.strategy = strategy_from_string(j.at("strategy").get<std::string>());
                bank.config.seed = j.at("seed").get<std::uint64_t>();
                std::string split = j.at("split").get<std::string>();
                bank.config.split = split == "train"  ? SplitName::train
                                    : split == "val" ? SplitName::val
                                                     : SplitName::test;
                bank.dataset_name = j.value("dataset", "");
            } else {
                bank.questions.push_back(mcq_from_json(j));
            }
        } catch (const std::exception& e) {
            throw ParseError(path.string(), lineno, e.what());
        }
    }
    return bank;
}

}  // namespace tef
