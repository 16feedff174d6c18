#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tef/core.hpp"
#include "tef/error.hpp"
#include "tef/retrieval.hpp"
#include "tef/text.hpp"

namespace tef {

enum class Task { object_prediction, relation_prediction };

inline const char* to_string(Task t) {
    return t == Task::object_prediction ? "object" : "relation";
}

enum class HistoryMode { rule, retrieved, none };

inline const char* to_string(HistoryMode m) {
    switch (m) {
        case HistoryMode::rule: return "rule";
        case HistoryMode::retrieved: return "retrieved";
        case HistoryMode::none: return "none";
    }
    return "?";
}

enum class HistoryFormat { graph, text, mixed };

inline const char* to_string(HistoryFormat f) {
    switch (f) {
        case HistoryFormat::graph: return "graph";
        case HistoryFormat::text: return "text";
        case HistoryFormat::mixed: return "mixed";
    }
    return "?";
}

enum class RetrieverKind { bm25, dense };

inline const char* to_string(RetrieverKind r) {
    return r == RetrieverKind::bm25 ? "bm25" : "dense";
}

/// A forecasting query: the event with one field hidden. Object prediction
/// keeps the relation and hides the object; relation prediction keeps the
/// object and hides the relation.
struct Query {
    EventId event_id;  // the generating event, used as the question key
    EntityId subject;
    std::optional<RelationId> relation;
    std::optional<EntityId> object;
    RelativeDay t{0};
    ComplexEventId complex_event;
    Task task{Task::object_prediction};

    bool operator==(const Query&) const = default;
};

inline void check_query(const Query& q) {
    if (q.task == Task::object_prediction) {
        if (!q.relation || q.object)
            throw DomainError("object-prediction query must carry a relation and hide the object");
    } else {
        if (!q.object || q.relation)
            throw DomainError("relation-prediction query must carry an object and hide the relation");
    }
}

/// An event resolved to display strings, so downstream rendering needs no
/// vocabulary access.
struct BundleEvent {
    EventId id;
    RelativeDay t{0};
    std::string subject;
    std::string relation;
    std::string object;

    bool operator==(const BundleEvent&) const = default;
};

struct DatedText {
    DocumentId doc;
    RelativeDay t{0};
    std::string body;

    bool operator==(const DatedText&) const = default;
};

struct EntityCandidateSet {
    struct Item {
        EntityId id;
        RelativeDay last_seen{0};
        std::string name;

        bool operator==(const Item&) const = default;
    };
    std::vector<Item> items;  // distinct, ordered (last_seen desc, id asc)
    std::int64_t window_days{0};

    bool operator==(const EntityCandidateSet&) const = default;
};

/// Everything a prompt's history region can contain. Rule mode fills the
/// nearest/further/related triplet (events for graph format, source-document
/// summaries for text format, both for mixed); retrieved mode fills
/// relevant_events and/or relevant_texts. Scope none leaves it all empty.
struct HistoryBundle {
    HistoryMode mode{HistoryMode::rule};
    HistoryFormat format{HistoryFormat::graph};
    ScopeKind scope{ScopeKind::complex_event};

    std::vector<BundleEvent> nearest_events;
    std::vector<BundleEvent> further_events;
    std::vector<BundleEvent> related_events;
    std::vector<BundleEvent> relevant_events;

    std::vector<DatedText> nearest_texts;
    std::vector<DatedText> further_texts;
    std::vector<DatedText> related_texts;
    std::vector<DatedText> relevant_texts;  // ascending t

    EntityCandidateSet candidates;  // audit trail of the entity filter
    bool filter_parse_failed{false};
    std::vector<std::string> warnings;

    bool operator==(const HistoryBundle&) const = default;

    std::size_t event_count() const {
        return nearest_events.size() + further_events.size() + related_events.size() +
               relevant_events.size();
    }
    std::size_t text_count() const {
        return nearest_texts.size() + further_texts.size() + related_texts.size() +
               relevant_texts.size();
    }
    bool empty() const { return event_count() + text_count() == 0; }
};

/// Knobs for history construction. `horizon_days` is the forecasting gap:
/// only data strictly before t - horizon_days + 1 is visible, so horizon 1
/// means "everything before the query day".
struct HistoryConfig {
    HistoryMode mode{HistoryMode::rule};
    HistoryFormat format{HistoryFormat::graph};
    ScopeKind scope{ScopeKind::complex_event};
    RetrieverKind retriever{RetrieverKind::bm25};
    std::int64_t history_length_days{30};
    std::int64_t local_window_days{2};
    std::int64_t candidate_window_days{2};
    std::int64_t text_window_days{7};
    std::int64_t horizon_days{1};
    std::size_t top_k_related{10};
    std::size_t max_events{20};
    std::size_t max_texts{5};
    std::size_t chunk_tokens{150};
    std::size_t chunk_overlap{30};
    std::size_t top_n_chunks{5};
    std::size_t summary_max_tokens{120};

    bool operator==(const HistoryConfig&) const = default;
};

inline void check_history_config(const HistoryConfig& c) {
    if (c.horizon_days < 1) throw ConfigError("horizon_days must be >= 1");
    if (c.history_length_days < 1) throw ConfigError("history_length_days must be >= 1");
    if (c.local_window_days < 1) throw ConfigError("local_window_days must be >= 1");
    if (c.candidate_window_days < 1) throw ConfigError("candidate_window_days must be >= 1");
    if (c.text_window_days < 1) throw ConfigError("text_window_days must be >= 1");
    if (c.chunk_overlap >= c.chunk_tokens)
        throw ConfigError("chunk_overlap must be smaller than chunk_tokens");
}

/// Exclusive upper bound of visible history: the day after the last visible
/// day. horizon 1 -> query day itself (strict past).
inline RelativeDay history_cutoff(const Query& q, const HistoryConfig& c) {
    return q.t - c.horizon_days + 1;
}

/// Supplies document summaries during history construction. The stored
/// provider prefers the summary already on the record and otherwise falls
/// back to the first `fallback_sentences` sentences, capped by tokens; a
/// gateway-backed provider can be substituted for model-generated summaries.
class SummaryProvider {
public:
    virtual ~SummaryProvider() = default;
    virtual std::string summary_of(const Document& doc) = 0;
};

class StoredSummaryProvider : public SummaryProvider {
public:
    explicit StoredSummaryProvider(std::size_t max_tokens = 120, std::size_t fallback_sentences = 2)
        : max_tokens_(max_tokens), fallback_sentences_(fallback_sentences) {}

    std::string summary_of(const Document& doc) override {
        if (doc.summary) return text::truncate_tokens(*doc.summary, max_tokens_);
        auto sentences = text::split_sentences(doc.body);
        if (sentences.size() > fallback_sentences_) sentences.resize(fallback_sentences_);
        return text::truncate_tokens(text::join(sentences, " "), max_tokens_);
    }

private:
    std::size_t max_tokens_;
    std::size_t fallback_sentences_;
};

}  // namespace tef
