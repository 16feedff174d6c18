#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "tef/core.hpp"
#include "tef/error.hpp"
#include "tef/rng.hpp"

namespace tef {

using nlohmann::json;

namespace detail {

inline json parse_line(const std::string& line, const std::filesystem::path& file,
                       std::size_t lineno) {
    try {
        return json::parse(line);
    } catch (const json::exception& e) {
        throw ParseError(file.string(), lineno, e.what());
    }
}

template <class Fn>
void for_each_ndjson_line(const std::filesystem::path& file, Fn&& fn) {
    std::ifstream in(file);
    if (!in) throw ParseError("cannot open " + file.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        fn(parse_line(line, file, lineno), lineno);
    }
}

template <class T>
T get_field(const json& j, const char* key, const std::filesystem::path& file,
            std::size_t lineno) {
    auto it = j.find(key);
    if (it == j.end())
        throw ParseError(file.string(), lineno, std::string("missing field \"") + key + "\"");
    try {
        return it->get<T>();
    } catch (const json::exception& e) {
        throw ParseError(file.string(), lineno, std::string("field \"") + key + "\": " + e.what());
    }
}

template <class IdT>
void load_vocab(const std::filesystem::path& file, Vocab<IdT>& out) {
    for_each_ndjson_line(file, [&](const json& j, std::size_t lineno) {
        auto id = get_field<std::int64_t>(j, "id", file, lineno);
        auto name = get_field<std::string>(j, "name", file, lineno);
        try {
            out.add(IdT{id}, name);
        } catch (const DomainError& e) {
            throw ParseError(file.string(), lineno, e.what());
        }
    });
}

template <class IdT>
void save_vocab(const Vocab<IdT>& v, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw Error("cannot write " + file.string());
    for (IdT id : v.ids()) {
        json j{{"id", id.value}, {"name", v.name_of(id)}};
        out << j.dump() << '\n';
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Load / save

/// Manifest schema:
///   {"name": ..., "epoch_date": "YYYY-MM-DD",
///    "files": {"events","documents","entities","relations","complex_events"},
///    "splits": {"train":{"first","last"}, "val":..., "test":...}}   (optional)
/// File paths are resolved relative to the manifest's directory.
inline DatasetData load_dataset_data(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw ParseError("cannot open manifest " + manifest_path.string());
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError("manifest " + manifest_path.string() + ": " + e.what());
    }
    auto dir = manifest_path.parent_path();
    auto file_of = [&](const char* key) -> std::filesystem::path {
        if (!m.contains("files") || !m["files"].contains(key))
            throw ParseError("manifest " + manifest_path.string() + ": missing files." + key);
        return dir / m["files"][key].get<std::string>();
    };

    DatasetData d;
    if (!m.contains("epoch_date"))
        throw ParseError("manifest " + manifest_path.string() + ": missing epoch_date");
    d.epoch = parse_date(m["epoch_date"].get<std::string>());

    detail::load_vocab(file_of("entities"), d.entities);
    detail::load_vocab(file_of("relations"), d.relations);
    detail::load_vocab(file_of("complex_events"), d.complex_events);

    auto docs_file = file_of("documents");
    detail::for_each_ndjson_line(docs_file, [&](const json& j, std::size_t lineno) {
        Document doc;
        doc.id = DocumentId{detail::get_field<std::int64_t>(j, "doc_id", docs_file, lineno)};
        doc.t = RelativeDay{detail::get_field<std::int64_t>(j, "t", docs_file, lineno)};
        doc.complex_event =
            ComplexEventId{detail::get_field<std::int64_t>(j, "complex_event", docs_file, lineno)};
        doc.title = detail::get_field<std::string>(j, "title", docs_file, lineno);
        doc.body = detail::get_field<std::string>(j, "body", docs_file, lineno);
        if (j.contains("summary") && !j["summary"].is_null())
            doc.summary = j["summary"].get<std::string>();
        d.documents.push_back(std::move(doc));
    });
    std::sort(d.documents.begin(), d.documents.end(),
              [](const Document& a, const Document& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < d.documents.size(); ++i)
        if (d.documents[i].id == d.documents[i - 1].id)
            throw ParseError("duplicate doc_id " + std::to_string(d.documents[i].id.value) +
                             " in " + docs_file.string());

    auto events_file = file_of("events");
    std::vector<AtomicEvent> events;
    detail::for_each_ndjson_line(events_file, [&](const json& j, std::size_t lineno) {
        AtomicEvent e;
        e.id = EventId{detail::get_field<std::int64_t>(j, "event_id", events_file, lineno)};
        e.subject = EntityId{detail::get_field<std::int64_t>(j, "subject", events_file, lineno)};
        e.relation = RelationId{detail::get_field<std::int64_t>(j, "relation", events_file, lineno)};
        e.object = EntityId{detail::get_field<std::int64_t>(j, "object", events_file, lineno)};
        e.t = RelativeDay{detail::get_field<std::int64_t>(j, "t", events_file, lineno)};
        e.complex_event =
            ComplexEventId{detail::get_field<std::int64_t>(j, "complex_event", events_file, lineno)};
        for (auto v : detail::get_field<std::vector<std::int64_t>>(j, "doc_ids", events_file, lineno))
            e.source_docs.push_back(DocumentId{v});
        events.push_back(std::move(e));
    });
    d.slices = build_slices(std::move(events), d.documents);

    if (m.contains("splits")) {
        auto range_of = [&](const char* key) {
            const auto& s = m["splits"];
            if (!s.contains(key))
                throw ParseError("manifest " + manifest_path.string() + ": missing splits." + key);
            return SplitRange{RelativeDay{s[key]["first"].get<std::int64_t>()},
                              RelativeDay{s[key]["last"].get<std::int64_t>()}};
        };
        d.splits = Splits{range_of("train"), range_of("val"), range_of("test")};
    }
    return d;
}

inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
    return Dataset(load_dataset_data(manifest_path));
}

/// Write the dataset under `dir` and return the manifest path.
inline std::filesystem::path save_dataset(const DatasetData& d, const std::filesystem::path& dir,
                                          const std::string& name = "dataset") {
    std::filesystem::create_directories(dir);
    detail::save_vocab(d.entities, dir / "entities.ndjson");
    detail::save_vocab(d.relations, dir / "relations.ndjson");
    detail::save_vocab(d.complex_events, dir / "complex_events.ndjson");

    {
        std::ofstream out(dir / "documents.ndjson");
        if (!out) throw Error("cannot write documents.ndjson");
        for (const auto& doc : d.documents) {
            json j{{"doc_id", doc.id.value},       {"t", doc.t.days},
                   {"complex_event", doc.complex_event.value},
                   {"title", doc.title},           {"body", doc.body}};
            if (doc.summary) j["summary"] = *doc.summary;
            out << j.dump() << '\n';
        }
    }
    {
        std::ofstream out(dir / "events.ndjson");
        if (!out) throw Error("cannot write events.ndjson");
        for (const auto& s : d.slices) {
            for (const auto& e : s.events) {
                json docs = json::array();
                for (DocumentId doc : e.source_docs) docs.push_back(doc.value);
                json j{{"event_id", e.id.value}, {"subject", e.subject.value},
                       {"relation", e.relation.value}, {"object", e.object.value},
                       {"t", e.t.days}, {"complex_event", e.complex_event.value},
                       {"doc_ids", docs}};
                out << j.dump() << '\n';
            }
        }
    }

    json m{{"name", name},
           {"epoch_date", format_date(d.epoch)},
           {"files",
            {{"events", "events.ndjson"},
             {"documents", "documents.ndjson"},
             {"entities", "entities.ndjson"},
             {"relations", "relations.ndjson"},
             {"complex_events", "complex_events.ndjson"}}}};
    if (d.splits) {
        m["splits"] = {{"train", {{"first", d.splits->train.first.days}, {"last", d.splits->train.last.days}}},
                       {"val", {{"first", d.splits->val.first.days}, {"last", d.splits->val.last.days}}},
                       {"test", {{"first", d.splits->test.first.days}, {"last", d.splits->test.last.days}}}};
    }
    auto manifest_path = dir / "manifest.json";
    std::ofstream out(manifest_path);
    if (!out) throw Error("cannot write manifest.json");
    out << m.dump(2) << '\n';
    return manifest_path;
}

/// Install split boundaries. Assignment is purely by timestamp; the
/// boundaries must be ordered, non-overlapping, and leave no event day
/// uncovered. Empty ranges (last < first) are allowed, so degenerate
/// all-in-train splits are expressible.
inline DatasetData temporal_split(DatasetData data, const Splits& boundaries) {
    if (data.slices.empty()) throw DomainError("temporal_split: dataset has no events");
    RelativeDay lo = data.slices.front().t, hi = data.slices.back().t;

    auto check_range = [&](const char* name, const SplitRange& r) {
        if (r.empty()) return;
        if (r.last < lo || hi < r.first)
            throw DomainError(std::string("temporal_split: ") + name + " range [" +
                              std::to_string(r.first.days) + ", " + std::to_string(r.last.days) +
                              "] lies outside dataset days [" + std::to_string(lo.days) + ", " +
                              std::to_string(hi.days) + "]");
    };
    check_range("train", boundaries.train);
    check_range("val", boundaries.val);
    check_range("test", boundaries.test);

    data.splits = boundaries;
    auto rep = validate_dataset(data);
    for (auto kind : {Violation::Kind::split_overlap, Violation::Kind::split_unordered,
                      Violation::Kind::event_outside_split}) {
        if (rep.count(kind) > 0) {
            for (const auto& v : rep.violations)
                if (v.kind == kind)
                    throw DomainError(std::string("temporal_split: ") + to_string(kind) + ": " +
                                      v.message);
        }
    }
    return data;
}

// ---------------------------------------------------------------------------
// Stats

struct SplitCounts {
    std::size_t events{0};
    std::size_t complex_events{0};
    std::size_t entities{0};
    std::size_t relations{0};
    std::size_t documents{0};

    bool operator==(const SplitCounts&) const = default;
};

struct CEStat {
    ComplexEventId id;
    std::string name;
    std::size_t events{0};
    std::size_t documents{0};
    std::size_t entities{0};
    RelativeDay first{0};
    RelativeDay last{0};
    std::int64_t span{0};  // last - first + 1
};

struct EntityCount {
    EntityId id;
    std::size_t count{0};  // subject + object occurrences

    bool operator==(const EntityCount&) const = default;
};

struct MonthCount {
    int year{0};
    unsigned month{0};
    std::size_t events{0};
};

struct DatasetStats {
    SplitCounts total;
    std::optional<SplitCounts> train, val, test;
    std::vector<CEStat> per_ce;                 // ascending ce id
    std::vector<EntityCount> entity_frequency;  // count desc, id asc
    std::vector<MonthCount> monthly;            // chronological
};

/// Split counts enumerate what actually participates: distinct entities,
/// relations and complex events over the split's events, plus documents
/// whose own timestamp falls in the split's day range.
inline DatasetStats compute_stats(const Dataset& ds) {
    DatasetStats st;

    struct Acc {
        std::size_t events{0};
        std::unordered_set<std::int64_t> ents, rels, ces;
        std::size_t docs{0};
        SplitCounts done() const {
            return SplitCounts{events, ces.size(), ents.size(), rels.size(), docs};
        }
    };
    Acc total;
    std::map<SplitName, Acc> per_split;

    std::unordered_map<std::int64_t, std::size_t> freq;
    std::map<std::pair<int, unsigned>, std::size_t> monthly;

    for (const auto& slice : ds.slices()) {
        auto split = ds.split_of(slice.t);
        auto date = from_relative_day(slice.t, ds.epoch());
        for (const auto& e : slice.events) {
            auto feed = [&](Acc& a) {
                ++a.events;
                a.ents.insert(e.subject.value);
                a.ents.insert(e.object.value);
                a.rels.insert(e.relation.value);
                a.ces.insert(e.complex_event.value);
            };
            feed(total);
            if (split) feed(per_split[*split]);
            ++freq[e.subject.value];
            ++freq[e.object.value];
            ++monthly[{static_cast<int>(date.year()), static_cast<unsigned>(date.month())}];
        }
    }
    for (const auto& doc : ds.documents()) {
        ++total.docs;
        if (auto split = ds.split_of(doc.t)) ++per_split[*split].docs;
    }

    st.total = total.done();
    if (ds.splits()) {
        st.train = per_split[SplitName::train].done();
        st.val = per_split[SplitName::val].done();
        st.test = per_split[SplitName::test].done();
    }

    for (ComplexEventId ce : ds.complex_events().ids()) {
        const auto& evs = ds.events_of_ce(ce);
        if (evs.empty()) continue;
        CEStat row;
        row.id = ce;
        row.name = ds.complex_events().name_of(ce);
        row.events = evs.size();
        row.documents = ds.docs_of_ce(ce).size();
        std::unordered_set<std::int64_t> ents;
        for (const AtomicEvent* e : evs) {
            ents.insert(e->subject.value);
            ents.insert(e->object.value);
        }
        row.entities = ents.size();
        row.first = evs.front()->t;
        row.last = evs.back()->t;
        row.span = row.last - row.first + 1;
        st.per_ce.push_back(std::move(row));
    }

    for (const auto& [id, count] : freq) st.entity_frequency.push_back({EntityId{id}, count});
    std::sort(st.entity_frequency.begin(), st.entity_frequency.end(),
              [](const EntityCount& a, const EntityCount& b) {
                  if (a.count != b.count) return a.count > b.count;
                  return a.id < b.id;
              });

    for (const auto& [ym, n] : monthly) st.monthly.push_back({ym.first, ym.second, n});
    return st;
}

inline json stats_to_json(const DatasetStats& st) {
    auto counts = [](const SplitCounts& c) {
        return json{{"events", c.events},
                    {"complex_events", c.complex_events},
                    {"entities", c.entities},
                    {"relations", c.relations},
                    {"documents", c.documents}};
    };
    json j{{"total", counts(st.total)}};
    if (st.train) j["train"] = counts(*st.train);
    if (st.val) j["val"] = counts(*st.val);
    if (st.test) j["test"] = counts(*st.test);
    j["complex_events"] = json::array();
    for (const auto& c : st.per_ce)
        j["complex_events"].push_back(json{{"id", c.id.value},
                                           {"name", c.name},
                                           {"events", c.events},
                                           {"documents", c.documents},
                                           {"entities", c.entities},
                                           {"first_day", c.first.days},
                                           {"last_day", c.last.days},
                                           {"span_days", c.span}});
    j["entity_frequency"] = json::array();
    for (const auto& e : st.entity_frequency)
        j["entity_frequency"].push_back(json{{"id", e.id.value}, {"count", e.count}});
    j["monthly"] = json::array();
    for (const auto& m : st.monthly)
        j["monthly"].push_back(json{{"year", m.year}, {"month", m.month}, {"events", m.events}});
    return j;
}

inline std::string stats_to_text(const DatasetStats& st, const Dataset& ds) {
    std::string out;
    char buf[256];
    auto row = [&](const char* label, const SplitCounts& c) {
        std::snprintf(buf, sizeof(buf), "%-8s %8zu %6zu %9zu %10zu %10zu\n", label, c.events,
                      c.complex_events, c.entities, c.relations, c.documents);
        out += buf;
    };
    std::snprintf(buf, sizeof(buf), "%-8s %8s %6s %9s %10s %10s\n", "split", "events", "CEs",
                  "entities", "relations", "documents");
    out += buf;
    if (st.train) row("train", *st.train);
    if (st.val) row("val", *st.val);
    if (st.test) row("test", *st.test);
    row("total", st.total);
    std::snprintf(buf, sizeof(buf), "\ncomplex events: %zu  day range: [%lld, %lld]\n",
                  st.per_ce.size(), static_cast<long long>(ds.min_day().days),
                  static_cast<long long>(ds.max_day().days));
    out += buf;
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic dataset generation

/// Slot model: each complex event runs for `days_per_ce` consecutive days and
/// emits `events_per_day` events per day from a fixed pool of local actors.
/// Slots are typed: periodic slots repeat a fixed triple every `period` days
/// (noise otherwise), copy-head slots keep a fixed (subject, relation) and
/// carry the previous day's object forward with probability
/// `copy_probability`, remaining slots are uniform noise. One document per
/// (complex event, day) narrates that day's events.
struct SyntheticSpec {
    std::uint64_t seed{0};
    int num_complex_events{4};
    int days_per_ce{30};
    int events_per_day{3};
    int entities_per_ce{8};
    int num_relations{6};
    double periodic_fraction{0.34};
    double copy_head_fraction{0.33};
    double copy_probability{0.9};
    int period{3};
    int ce_start_stride{5};
    double train_fraction{0.7};
    double val_fraction{0.15};
    std::string epoch_date{"2021-01-01"};
};

inline void validate_spec(const SyntheticSpec& s) {
    auto bad = [](const std::string& m) { throw ConfigError("synthetic spec: " + m); };
    if (s.num_complex_events < 1) bad("num_complex_events must be >= 1");
    if (s.days_per_ce < 3) bad("days_per_ce must be >= 3");
    if (s.events_per_day < 1) bad("events_per_day must be >= 1");
    if (s.entities_per_ce < 2) bad("entities_per_ce must be >= 2");
    if (s.num_relations < 1) bad("num_relations must be >= 1");
    if (s.periodic_fraction < 0 || s.copy_head_fraction < 0 ||
        s.periodic_fraction + s.copy_head_fraction > 1.0 + 1e-9)
        bad("periodic_fraction + copy_head_fraction must lie in [0, 1]");
    if (s.copy_probability < 0 || s.copy_probability > 1) bad("copy_probability must be in [0, 1]");
    if (s.period < 1) bad("period must be >= 1");
    if (s.ce_start_stride < 0) bad("ce_start_stride must be >= 0");
    if (s.train_fraction <= 0 || s.val_fraction <= 0 ||
        s.train_fraction + s.val_fraction >= 1.0)
        bad("train/val fractions must be positive and sum below 1");
}

inline DatasetData generate_synthetic(const SyntheticSpec& spec) {
    validate_spec(spec);
    DatasetData d;
    d.epoch = parse_date(spec.epoch_date);

    char buf[64];
    for (int r = 0; r < spec.num_relations; ++r) {
        std::snprintf(buf, sizeof(buf), "Relation R%02d", r);
        d.relations.add(RelationId{r}, buf);
    }

    Rng root(spec.seed);
    std::vector<AtomicEvent> events;
    std::int64_t next_event = 0, next_doc = 0, next_entity = 0;

    int n_periodic = static_cast<int>(spec.periodic_fraction * spec.events_per_day + 0.5);
    int n_copy = static_cast<int>(spec.copy_head_fraction * spec.events_per_day + 0.5);
    n_periodic = std::min(n_periodic, spec.events_per_day);
    n_copy = std::min(n_copy, spec.events_per_day - n_periodic);

    for (int c = 0; c < spec.num_complex_events; ++c) {
        std::snprintf(buf, sizeof(buf), "Crisis C%03d", c);
        d.complex_events.add(ComplexEventId{c}, buf);

        std::vector<EntityId> pool;
        for (int e = 0; e < spec.entities_per_ce; ++e) {
            std::snprintf(buf, sizeof(buf), "Actor C%03d E%02d", c, e);
            EntityId id{next_entity++};
            d.entities.add(id, buf);
            pool.push_back(id);
        }

        Rng rng = root.child(static_cast<std::uint64_t>(c));
        auto pick_other = [&](EntityId avoid) {
            EntityId o = rng.pick(pool);
            while (o == avoid) o = rng.pick(pool);
            return o;
        };

        struct Slot {
            EntityId subject;
            RelationId relation;
            EntityId object;  // fixed triple (periodic) or current chain head (copy)
        };
        std::vector<Slot> slots;
        for (int k = 0; k < spec.events_per_day; ++k) {
            Slot s;
            s.subject = rng.pick(pool);
            s.relation = RelationId{static_cast<std::int64_t>(rng.below(
                static_cast<std::uint64_t>(spec.num_relations)))};
            s.object = pick_other(s.subject);
            slots.push_back(s);
        }

        RelativeDay start{static_cast<std::int64_t>(c) * spec.ce_start_stride};
        for (int day = 0; day < spec.days_per_ce; ++day) {
            RelativeDay t = start + day;
            DocumentId doc_id{next_doc++};
            std::string body;
            for (int k = 0; k < spec.events_per_day; ++k) {
                EntityId s, o;
                RelationId r;
                if (k < n_periodic && day % spec.period == 0) {
                    s = slots[k].subject;
                    r = slots[k].relation;
                    o = slots[k].object;
                } else if (k >= n_periodic && k < n_periodic + n_copy) {
                    s = slots[k].subject;
                    r = slots[k].relation;
                    if (day > 0 && rng.unit() < spec.copy_probability) {
                        o = slots[k].object;  // carry yesterday's object forward
                    } else {
                        o = pick_other(s);
                        slots[k].object = o;
                    }
                } else {
                    s = rng.pick(pool);
                    r = RelationId{static_cast<std::int64_t>(rng.below(
                        static_cast<std::uint64_t>(spec.num_relations)))};
                    o = pick_other(s);
                }
                events.push_back(AtomicEvent{EventId{next_event++}, s, r, o, t, ComplexEventId{c},
                                             {doc_id}});
                body += d.entities.name_of(s) + " engaged in " + d.relations.name_of(r) +
                        " with " + d.entities.name_of(o) + ". ";
            }
            std::snprintf(buf, sizeof(buf), "Crisis C%03d report for day %d.", c, day);
            body += buf;
            std::snprintf(buf, sizeof(buf), "Crisis C%03d day %d", c, day);
            d.documents.push_back(
                Document{doc_id, t, ComplexEventId{c}, buf, std::move(body), std::nullopt});
        }
    }

    d.slices = build_slices(std::move(events), d.documents);

    std::vector<RelativeDay> days;
    for (const auto& s : d.slices) days.push_back(s.t);
    if (days.size() < 3) throw ConfigError("synthetic spec produces fewer than 3 distinct days");
    auto n = static_cast<std::int64_t>(days.size());
    auto n_train = std::max<std::int64_t>(1, static_cast<std::int64_t>(n * spec.train_fraction));
    auto n_val = std::max<std::int64_t>(1, static_cast<std::int64_t>(n * spec.val_fraction));
    if (n_train + n_val >= n) {
        n_train = n - 2;
        n_val = 1;
    }
    Splits sp;
    sp.train = {days.front(), days[n_train - 1]};
    sp.val = {days[n_train - 1] + 1, days[n_train + n_val - 1]};
    sp.test = {days[n_train + n_val - 1] + 1, days.back()};
    d.splits = sp;
    return d;
}

}  // namespace tef
