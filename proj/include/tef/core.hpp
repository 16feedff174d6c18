#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tef/error.hpp"
#include "tef/ids.hpp"
#include "tef/text.hpp"

namespace tef {

using CalendarDate = std::chrono::year_month_day;

inline CalendarDate parse_date(const std::string& iso) {
    int y = 0, m = 0, d = 0;
    char tail = 0;
    if (std::sscanf(iso.c_str(), "%d-%d-%d%c", &y, &m, &d, &tail) != 3)
        throw ParseError("not an ISO-8601 date: \"" + iso + "\"");
    CalendarDate ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
                     std::chrono::day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) throw ParseError("invalid calendar date: \"" + iso + "\"");
    return ymd;
}

inline std::string format_date(CalendarDate d) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(d.year()),
                  static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
    return buf;
}

/// Whole-day difference from the dataset epoch. Exact and invertible.
inline RelativeDay to_relative_day(CalendarDate date, CalendarDate epoch) {
    auto diff = (std::chrono::sys_days(date) - std::chrono::sys_days(epoch)).count();
    if (diff < 0)
        throw DomainError("date " + format_date(date) + " precedes epoch " + format_date(epoch));
    return RelativeDay{diff};
}

inline CalendarDate from_relative_day(RelativeDay t, CalendarDate epoch) {
    return CalendarDate{std::chrono::sys_days(epoch) + std::chrono::days(t.days)};
}

struct AtomicEvent {
    EventId id;
    EntityId subject;
    RelationId relation;
    EntityId object;
    RelativeDay t;
    ComplexEventId complex_event;
    std::vector<DocumentId> source_docs;

    bool operator==(const AtomicEvent&) const = default;
};

struct Document {
    DocumentId id;
    RelativeDay t;
    ComplexEventId complex_event;
    std::string title;
    std::string body;
    std::optional<std::string> summary;

    bool operator==(const Document&) const = default;
};

struct TimeSlice {
    RelativeDay t;
    std::vector<AtomicEvent> events;  // sorted by event id
    std::vector<DocumentId> docs;     // sorted

    bool operator==(const TimeSlice&) const = default;
};

/// Inclusive day range.
struct SplitRange {
    RelativeDay first;
    RelativeDay last;

    bool contains(RelativeDay t) const { return first <= t && t <= last; }
    bool empty() const { return last < first; }
    bool operator==(const SplitRange&) const = default;
};

enum class SplitName { train, val, test };

inline const char* to_string(SplitName s) {
    switch (s) {
        case SplitName::train: return "train";
        case SplitName::val: return "val";
        case SplitName::test: return "test";
    }
    return "?";
}

struct Splits {
    SplitRange train;
    SplitRange val;
    SplitRange test;

    const SplitRange& of(SplitName s) const {
        switch (s) {
            case SplitName::val: return val;
            case SplitName::test: return test;
            default: return train;
        }
    }
    bool operator==(const Splits&) const = default;
};

/// The value content of a dataset. Mutable while being assembled or planted
/// with defects in tests; frozen into a Dataset for use.
struct DatasetData {
    EntityVocab entities;
    RelationVocab relations;
    ComplexEventVocab complex_events;
    std::vector<TimeSlice> slices;    // strictly increasing t
    std::vector<Document> documents;  // sorted by doc id
    std::optional<Splits> splits;
    CalendarDate epoch{std::chrono::year{1970}, std::chrono::month{1}, std::chrono::day{1}};

    bool operator==(const DatasetData&) const = default;
};

// ---------------------------------------------------------------------------
// build_slices

/// Group events by timestamp into time slices. One slice per distinct t,
/// slices ascending in t, events within a slice ascending by event id.
/// Docs of a slice are the distinct source documents of its events.
/// Throws ValidationError naming the ids if any event references a document
/// whose timestamp differs from the event's.
inline std::vector<TimeSlice> build_slices(std::vector<AtomicEvent> events,
                                           const std::vector<Document>& docs) {
    std::unordered_map<std::int64_t, RelativeDay> doc_time;
    doc_time.reserve(docs.size());
    for (const auto& d : docs) doc_time.emplace(d.id.value, d.t);

    std::string bad;
    for (const auto& e : events) {
        for (DocumentId d : e.source_docs) {
            auto it = doc_time.find(d.value);
            if (it != doc_time.end() && it->second != e.t) {
                if (!bad.empty()) bad += ", ";
                bad += "event " + std::to_string(e.id.value) + "/doc " + std::to_string(d.value);
            }
        }
    }
    if (!bad.empty())
        throw ValidationError("document timestamp mismatch for: " + bad);

    std::sort(events.begin(), events.end(), [](const AtomicEvent& a, const AtomicEvent& b) {
        if (a.t != b.t) return a.t < b.t;
        return a.id < b.id;
    });

    std::vector<TimeSlice> slices;
    for (auto& e : events) {
        if (slices.empty() || slices.back().t != e.t) slices.push_back(TimeSlice{e.t, {}, {}});
        slices.back().events.push_back(std::move(e));
    }
    for (auto& s : slices) {
        std::vector<DocumentId> ds;
        for (const auto& e : s.events)
            for (DocumentId d : e.source_docs) ds.push_back(d);
        std::sort(ds.begin(), ds.end());
        ds.erase(std::unique(ds.begin(), ds.end()), ds.end());
        s.docs = std::move(ds);
    }
    return slices;
}

// ---------------------------------------------------------------------------
// Validation

struct Violation {
    enum class Kind {
        dangling_entity,
        dangling_relation,
        dangling_complex_event,
        dangling_document,
        duplicate_event_id,
        missing_subject,
        missing_relation,
        missing_object,
        no_source_docs,
        doc_time_mismatch,
        empty_document_body,
        summary_not_shorter,
        slice_order,
        slice_time_mismatch,
        slice_event_order,
        split_overlap,
        split_unordered,
        event_outside_split,
    };

    Kind kind;
    std::string message;
};

inline const char* to_string(Violation::Kind k) {
    using K = Violation::Kind;
    switch (k) {
        case K::dangling_entity: return "dangling-entity";
        case K::dangling_relation: return "dangling-relation";
        case K::dangling_complex_event: return "dangling-complex-event";
        case K::dangling_document: return "dangling-document";
        case K::duplicate_event_id: return "duplicate-event-id";
        case K::missing_subject: return "missing-subject";
        case K::missing_relation: return "missing-relation";
        case K::missing_object: return "missing-object";
        case K::no_source_docs: return "no-source-docs";
        case K::doc_time_mismatch: return "doc-time-mismatch";
        case K::empty_document_body: return "empty-document-body";
        case K::summary_not_shorter: return "summary-not-shorter";
        case K::slice_order: return "slice-order";
        case K::slice_time_mismatch: return "slice-time-mismatch";
        case K::slice_event_order: return "slice-event-order";
        case K::split_overlap: return "split-overlap";
        case K::split_unordered: return "split-unordered";
        case K::event_outside_split: return "event-outside-split";
    }
    return "?";
}

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
    std::size_t count(Violation::Kind k) const {
        std::size_t n = 0;
        for (const auto& v : violations) n += (v.kind == k);
        return n;
    }
    std::string to_text() const {
        std::string out;
        for (const auto& v : violations) {
            out += to_string(v.kind);
            out += ": ";
            out += v.message;
            out += '\n';
        }
        return out;
    }
};

/// Enumerate every structural invariant violation. Violations are data, not
/// failures: the report is empty iff the dataset is well-formed.
inline ValidationReport validate_dataset(const DatasetData& d) {
    ValidationReport rep;
    auto add = [&](Violation::Kind k, std::string msg) {
        rep.violations.push_back(Violation{k, std::move(msg)});
    };

    std::unordered_map<std::int64_t, RelativeDay> doc_time;
    for (const auto& doc : d.documents) {
        doc_time.emplace(doc.id.value, doc.t);
        if (doc.body.empty())
            add(Violation::Kind::empty_document_body, "doc " + std::to_string(doc.id.value));
        else if (doc.summary && text::token_count(*doc.summary) >= text::token_count(doc.body))
            add(Violation::Kind::summary_not_shorter, "doc " + std::to_string(doc.id.value));
        if (!d.complex_events.contains(doc.complex_event))
            add(Violation::Kind::dangling_complex_event,
                "doc " + std::to_string(doc.id.value) + " ce " +
                    std::to_string(doc.complex_event.value));
    }

    std::unordered_set<std::int64_t> seen_events;
    for (std::size_t i = 0; i < d.slices.size(); ++i) {
        const auto& s = d.slices[i];
        if (i > 0 && !(d.slices[i - 1].t < s.t))
            add(Violation::Kind::slice_order,
                "slice " + std::to_string(i) + " t=" + std::to_string(s.t.days) +
                    " not after t=" + std::to_string(d.slices[i - 1].t.days));
        for (std::size_t j = 0; j < s.events.size(); ++j) {
            const auto& e = s.events[j];
            std::string tag = "event " + std::to_string(e.id.value);
            if (!seen_events.insert(e.id.value).second)
                add(Violation::Kind::duplicate_event_id, tag);
            if (j > 0 && !(s.events[j - 1].id < e.id))
                add(Violation::Kind::slice_event_order, tag);
            if (e.t != s.t)
                add(Violation::Kind::slice_time_mismatch,
                    tag + " t=" + std::to_string(e.t.days) + " in slice t=" +
                        std::to_string(s.t.days));
            if (!e.subject.valid())
                add(Violation::Kind::missing_subject, tag);
            else if (!d.entities.contains(e.subject))
                add(Violation::Kind::dangling_entity, tag + " subject " + std::to_string(e.subject.value));
            if (!e.relation.valid())
                add(Violation::Kind::missing_relation, tag);
            else if (!d.relations.contains(e.relation))
                add(Violation::Kind::dangling_relation, tag + " relation " + std::to_string(e.relation.value));
            if (!e.object.valid())
                add(Violation::Kind::missing_object, tag);
            else if (!d.entities.contains(e.object))
                add(Violation::Kind::dangling_entity, tag + " object " + std::to_string(e.object.value));
            if (!d.complex_events.contains(e.complex_event))
                add(Violation::Kind::dangling_complex_event, tag);
            if (e.source_docs.empty()) add(Violation::Kind::no_source_docs, tag);
            for (DocumentId doc : e.source_docs) {
                auto it = doc_time.find(doc.value);
                if (it == doc_time.end())
                    add(Violation::Kind::dangling_document, tag + " doc " + std::to_string(doc.value));
                else if (it->second != e.t)
                    add(Violation::Kind::doc_time_mismatch,
                        tag + " doc " + std::to_string(doc.value) + " at t=" +
                            std::to_string(it->second.days));
            }
        }
    }

    if (d.splits) {
        const auto& sp = *d.splits;
        auto overlap = [](const SplitRange& a, const SplitRange& b) {
            if (a.empty() || b.empty()) return false;
            return a.first <= b.last && b.first <= a.last;
        };
        if (overlap(sp.train, sp.val) || overlap(sp.val, sp.test) || overlap(sp.train, sp.test))
            add(Violation::Kind::split_overlap, "train/val/test day ranges overlap");
        if (!(sp.train.last < sp.val.first) || !(sp.val.last < sp.test.first))
            add(Violation::Kind::split_unordered, "ranges must be ordered train < val < test");
        for (const auto& s : d.slices) {
            int n = sp.train.contains(s.t) + sp.val.contains(s.t) + sp.test.contains(s.t);
            if (n != 1)
                add(Violation::Kind::event_outside_split,
                    std::to_string(s.events.size()) + " events at t=" + std::to_string(s.t.days));
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Dataset

/// Immutable dataset with derived lookup indexes. Move-only; the heap
/// buffers of `data()` stay put on move, so raw event/document pointers
/// handed out by the accessors remain valid for the dataset's lifetime.
class Dataset {
public:
    explicit Dataset(DatasetData data) : data_(std::move(data)) { build_indexes(); }

    Dataset(const Dataset&) = delete;
    Dataset& operator=(const Dataset&) = delete;
    Dataset(Dataset&&) = default;
    Dataset& operator=(Dataset&&) = default;

    const DatasetData& data() const { return data_; }
    const EntityVocab& entities() const { return data_.entities; }
    const RelationVocab& relations() const { return data_.relations; }
    const ComplexEventVocab& complex_events() const { return data_.complex_events; }
    const std::vector<TimeSlice>& slices() const { return data_.slices; }
    const std::optional<Splits>& splits() const { return data_.splits; }
    CalendarDate epoch() const { return data_.epoch; }

    std::size_t event_count() const { return event_count_; }
    std::size_t document_count() const { return data_.documents.size(); }

    RelativeDay min_day() const {
        return data_.slices.empty() ? RelativeDay{0} : data_.slices.front().t;
    }
    RelativeDay max_day() const {
        return data_.slices.empty() ? RelativeDay{0} : data_.slices.back().t;
    }

    std::span<const AtomicEvent> events_at(RelativeDay t) const {
        auto it = std::lower_bound(data_.slices.begin(), data_.slices.end(), t,
                                   [](const TimeSlice& s, RelativeDay d) { return s.t < d; });
        if (it == data_.slices.end() || it->t != t) return {};
        return {it->events.data(), it->events.size()};
    }

    const Document* find_document(DocumentId id) const {
        auto it = doc_index_.find(id);
        return it == doc_index_.end() ? nullptr : it->second;
    }

    const std::vector<Document>& documents() const { return data_.documents; }

    static const std::vector<const AtomicEvent*>& no_events() {
        static const std::vector<const AtomicEvent*> empty;
        return empty;
    }
    static const std::vector<const Document*>& no_docs() {
        static const std::vector<const Document*> empty;
        return empty;
    }

    /// Events with the given subject, ascending (t, event id).
    const std::vector<const AtomicEvent*>& events_of_subject(EntityId s) const {
        auto it = by_subject_.find(s);
        return it == by_subject_.end() ? no_events() : it->second;
    }

    /// Events of one complex event, ascending (t, event id).
    const std::vector<const AtomicEvent*>& events_of_ce(ComplexEventId c) const {
        auto it = by_ce_.find(c);
        return it == by_ce_.end() ? no_events() : it->second;
    }

    /// Documents of one complex event, ascending (t, doc id).
    const std::vector<const Document*>& docs_of_ce(ComplexEventId c) const {
        auto it = docs_by_ce_.find(c);
        return it == docs_by_ce_.end() ? no_docs() : it->second;
    }

    template <class Fn>
    void for_each_event(Fn&& fn) const {
        for (const auto& s : data_.slices)
            for (const auto& e : s.events) fn(e);
    }

    std::optional<SplitName> split_of(RelativeDay t) const {
        if (!data_.splits) return std::nullopt;
        if (data_.splits->train.contains(t)) return SplitName::train;
        if (data_.splits->val.contains(t)) return SplitName::val;
        if (data_.splits->test.contains(t)) return SplitName::test;
        return std::nullopt;
    }

    /// Events whose timestamp falls in the given split, ascending (t, id).
    std::vector<const AtomicEvent*> events_in_split(SplitName name) const {
        std::vector<const AtomicEvent*> out;
        if (!data_.splits) return out;
        const SplitRange& r = data_.splits->of(name);
        for (const auto& s : data_.slices) {
            if (!r.contains(s.t)) continue;
            for (const auto& e : s.events) out.push_back(&e);
        }
        return out;
    }

private:
    void build_indexes() {
        event_count_ = 0;
        for (const auto& s : data_.slices) {
            event_count_ += s.events.size();
            for (const auto& e : s.events) {
                by_subject_[e.subject].push_back(&e);
                by_ce_[e.complex_event].push_back(&e);
            }
        }
        for (const auto& d : data_.documents) {
            doc_index_.emplace(d.id, &d);
            docs_by_ce_[d.complex_event].push_back(&d);
        }
        for (auto& [_, v] : docs_by_ce_)
            std::sort(v.begin(), v.end(), [](const Document* a, const Document* b) {
                if (a->t != b->t) return a->t < b->t;
                return a->id < b->id;
            });
        // by_subject_/by_ce_ inherit slice order, already ascending (t, id).
    }

    DatasetData data_;
    std::size_t event_count_{0};
    std::unordered_map<DocumentId, const Document*> doc_index_;
    std::unordered_map<EntityId, std::vector<const AtomicEvent*>> by_subject_;
    std::unordered_map<ComplexEventId, std::vector<const AtomicEvent*>> by_ce_;
    std::unordered_map<ComplexEventId, std::vector<const Document*>> docs_by_ce_;
};

}  // namespace tef
