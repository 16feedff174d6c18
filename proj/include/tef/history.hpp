#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "tef/core.hpp"
#include "tef/error.hpp"
#include "tef/gateway.hpp"
#include "tef/history_types.hpp"
#include "tef/prompting.hpp"
#include "tef/retrieval.hpp"

namespace tef {

namespace detail {

inline BundleEvent to_bundle_event(const Dataset& ds, const AtomicEvent& e) {
    return BundleEvent{e.id, e.t, ds.entities().name_of(e.subject),
                       ds.relations().name_of(e.relation), ds.entities().name_of(e.object)};
}

/// Events with t in [lo, hi), ascending (t, id). `ce` restricts to one
/// complex event; nullopt means the whole graph.
inline std::vector<const AtomicEvent*> events_in_window(const Dataset& ds, RelativeDay lo,
                                                        RelativeDay hi,
                                                        std::optional<ComplexEventId> ce) {
    std::vector<const AtomicEvent*> out;
    if (lo >= hi) return out;
    if (ce) {
        const auto& all = ds.events_of_ce(*ce);  // ascending (t, id)
        for (const AtomicEvent* e : all) {
            if (e->t >= hi) break;
            if (e->t >= lo) out.push_back(e);
        }
        return out;
    }
    for (const TimeSlice& slice : ds.slices()) {
        if (slice.t < lo) continue;
        if (slice.t >= hi) break;
        for (const AtomicEvent& e : slice.events) out.push_back(&e);
    }
    return out;
}

/// Dated summaries of the source documents behind `events`, one entry per
/// distinct document, ascending (t, doc id). Documents whose summaries come
/// back empty are skipped with a warning. `seen` carries the cross-section
/// dedupe state so a document is summarized for the first section that cites
/// it only.
inline std::vector<DatedText> texts_for_events(const Dataset& ds,
                                               const std::vector<const AtomicEvent*>& events,
                                               SummaryProvider& provider,
                                               std::unordered_set<std::int64_t>& seen,
                                               std::vector<std::string>& warnings) {
    std::vector<const Document*> docs;
    for (const AtomicEvent* e : events)
        for (DocumentId id : e->source_docs) {
            if (seen.count(id.value)) continue;
            seen.insert(id.value);
            if (const Document* d = ds.find_document(id)) docs.push_back(d);
        }
    std::sort(docs.begin(), docs.end(), [](const Document* a, const Document* b) {
        return a->t != b->t ? a->t < b->t : a->id.value < b->id.value;
    });
    std::vector<DatedText> out;
    for (const Document* d : docs) {
        std::string s;
        try {
            s = provider.summary_of(*d);
        } catch (const TransportError& e) {
            warnings.push_back("summary failed for document " + std::to_string(d->id.value) +
                               ": " + e.what());
            continue;
        }
        if (s.empty()) {
            warnings.push_back("empty summary for document " + std::to_string(d->id.value) +
                               ", skipped");
            continue;
        }
        out.push_back(DatedText{d->id, d->t, std::move(s)});
    }
    return out;
}

inline std::vector<BundleEvent> to_bundle_events(const Dataset& ds,
                                                 const std::vector<const AtomicEvent*>& events) {
    std::vector<BundleEvent> out;
    out.reserve(events.size());
    for (const AtomicEvent* e : events) out.push_back(to_bundle_event(ds, *e));
    return out;
}

template <class T, class KeyFn>
void keep_most_recent(std::vector<T>& items, std::size_t n, KeyFn key) {
    if (items.size() <= n) return;
    if (n == 0) {
        items.clear();
        return;
    }
    // Pick the n items with the largest (t, id) keys, then restore the
    // list's own ordering for the survivors.
    std::vector<std::size_t> idx(items.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return key(items[a]) > key(items[b]); });
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    std::vector<T> kept;
    kept.reserve(n);
    for (std::size_t i : idx) kept.push_back(std::move(items[i]));
    items = std::move(kept);
}

}  // namespace detail

/// Enforce the bundle-wide item limits, keeping the most recent items.
/// Sections are filled in priority order: nearest, then related, then
/// further, then relevant; each takes what the earlier sections left.
inline HistoryBundle truncate_history(HistoryBundle b, std::size_t max_events,
                                      std::size_t max_texts) {
    auto event_key = [](const BundleEvent& e) { return std::pair(e.t.days, e.id.value); };
    auto text_key = [](const DatedText& d) { return std::pair(d.t.days, d.doc.value); };

    std::size_t remaining = max_events;
    for (auto* list : {&b.nearest_events, &b.related_events, &b.further_events,
                       &b.relevant_events}) {
        detail::keep_most_recent(*list, remaining, event_key);
        remaining -= list->size();
    }
    remaining = max_texts;
    for (auto* list : {&b.nearest_texts, &b.related_texts, &b.further_texts, &b.relevant_texts}) {
        detail::keep_most_recent(*list, remaining, text_key);
        remaining -= list->size();
    }
    return b;
}

// ---------------------------------------------------------------------------
// Rule-based history

/// Local + global view of the past. Nearest/further split the recent window
/// of the query's context at `local_window_days`; related is the global
/// same-subject view. Text and mixed formats additionally carry dated
/// summaries of the events' source documents.
inline HistoryBundle build_rule_history(const Dataset& ds, const Query& q,
                                        const HistoryConfig& cfg,
                                        SummaryProvider* summaries = nullptr) {
    check_query(q);
    check_history_config(cfg);
    HistoryBundle b;
    b.mode = HistoryMode::rule;
    b.format = cfg.format;
    b.scope = cfg.scope;
    if (cfg.scope == ScopeKind::none) return b;

    const RelativeDay as_of = history_cutoff(q, cfg);
    const std::optional<ComplexEventId> ce =
        cfg.scope == ScopeKind::complex_event ? std::optional(q.complex_event) : std::nullopt;
    const RelativeDay far_lo = as_of - cfg.history_length_days;
    const RelativeDay near_lo = as_of - std::min(cfg.local_window_days, cfg.history_length_days);

    auto nearest = detail::events_in_window(ds, near_lo, as_of, ce);
    auto further = detail::events_in_window(ds, far_lo, near_lo, ce);

    // Global view: the most recent top-K events of the query subject,
    // regardless of complex event, listed in ascending time for rendering.
    std::vector<const AtomicEvent*> related;
    {
        const auto& of_subject = ds.events_of_subject(q.subject);  // ascending (t, id)
        for (auto it = of_subject.rbegin(); it != of_subject.rend(); ++it) {
            if ((*it)->t >= as_of) continue;
            related.push_back(*it);
            if (related.size() == cfg.top_k_related) break;
        }
        std::reverse(related.begin(), related.end());
    }

    b.nearest_events = detail::to_bundle_events(ds, nearest);
    b.further_events = detail::to_bundle_events(ds, further);
    b.related_events = detail::to_bundle_events(ds, related);

    if (cfg.format != HistoryFormat::graph) {
        StoredSummaryProvider stored(cfg.summary_max_tokens);
        SummaryProvider& provider = summaries ? *summaries : stored;
        std::unordered_set<std::int64_t> seen;
        b.nearest_texts = detail::texts_for_events(ds, nearest, provider, seen, b.warnings);
        b.further_texts = detail::texts_for_events(ds, further, provider, seen, b.warnings);
        b.related_texts = detail::texts_for_events(ds, related, provider, seen, b.warnings);
    }
    return truncate_history(std::move(b), cfg.max_events, cfg.max_texts);
}

// ---------------------------------------------------------------------------
// Entity candidate set

/// Distinct subjects and objects of recent in-scope events, newest first.
inline EntityCandidateSet build_candidate_set(const Dataset& ds, const Query& q,
                                              const HistoryConfig& cfg) {
    check_query(q);
    check_history_config(cfg);
    EntityCandidateSet set;
    set.window_days = cfg.candidate_window_days;
    if (cfg.scope == ScopeKind::none) return set;

    const RelativeDay as_of = history_cutoff(q, cfg);
    const std::optional<ComplexEventId> ce =
        cfg.scope == ScopeKind::complex_event ? std::optional(q.complex_event) : std::nullopt;
    auto events = detail::events_in_window(ds, as_of - cfg.candidate_window_days, as_of, ce);

    std::unordered_map<EntityId, RelativeDay> last_seen;
    for (const AtomicEvent* e : events)
        for (EntityId ent : {e->subject, e->object}) {
            auto [it, fresh] = last_seen.emplace(ent, e->t);
            if (!fresh && e->t > it->second) it->second = e->t;
        }
    for (const auto& [ent, t] : last_seen)
        set.items.push_back({ent, t, ds.entities().name_of(ent)});
    std::sort(set.items.begin(), set.items.end(),
              [](const EntityCandidateSet::Item& a, const EntityCandidateSet::Item& b) {
                  return a.last_seen != b.last_seen ? a.last_seen > b.last_seen
                                                   : a.id.value < b.id.value;
              });
    return set;
}

// ---------------------------------------------------------------------------
// Retrieved history

namespace detail {

struct EntityFilterResult {
    EntityCandidateSet candidates;                  // the full set shown to the filter
    std::vector<EntityCandidateSet::Item> kept;     // the filtered subset
    bool parse_failed{false};
};

inline EntityFilterResult run_entity_filter(const Dataset& ds, const Query& q,
                                            const HistoryConfig& cfg, Gateway& gateway,
                                            const PromptTemplate& filter_template) {
    EntityFilterResult r;
    r.candidates = build_candidate_set(ds, q, cfg);
    if (r.candidates.items.empty()) return r;
    auto outcome = gateway.filter_candidate_entities(ds.entities().name_of(q.subject),
                                                     r.candidates, filter_template);
    r.kept = std::move(outcome.kept);
    r.parse_failed = outcome.parse_failed;
    return r;
}

/// Recent in-scope events touching any of the kept entities, newest first,
/// truncated to max_events.
inline std::vector<BundleEvent> relevant_events_for(const Dataset& ds, const Query& q,
                                                    const HistoryConfig& cfg,
                                                    const std::vector<EntityCandidateSet::Item>& kept) {
    std::vector<BundleEvent> out;
    if (kept.empty()) return out;
    std::unordered_set<EntityId> entities;
    for (const auto& item : kept) entities.insert(item.id);

    const RelativeDay as_of = history_cutoff(q, cfg);
    const std::optional<ComplexEventId> ce =
        cfg.scope == ScopeKind::complex_event ? std::optional(q.complex_event) : std::nullopt;
    auto events = events_in_window(ds, as_of - cfg.history_length_days, as_of, ce);
    for (auto it = events.rbegin(); it != events.rend(); ++it) {
        const AtomicEvent* e = *it;
        if (!entities.count(e->subject) && !entities.count(e->object)) continue;
        out.push_back(to_bundle_event(ds, *e));
        if (out.size() == cfg.max_events) break;
    }
    return out;  // (t desc, id desc->asc handled below)
}

/// Documents of the text window ranked against `query_text`; the parents of
/// the top-n chunks, deduplicated in rank order.
inline std::vector<const Document*> retrieve_documents(const Dataset& ds, const Query& q,
                                                       const HistoryConfig& cfg,
                                                       const std::string& query_text,
                                                       const Embedder* embedder) {
    const RelativeDay as_of = history_cutoff(q, cfg);
    std::vector<const Document*> pool;
    if (cfg.scope == ScopeKind::complex_event) {
        for (const Document* d : ds.docs_of_ce(q.complex_event))
            if (d->t >= as_of - cfg.text_window_days && d->t < as_of) pool.push_back(d);
    } else {
        for (const Document& d : ds.documents())
            if (d.t >= as_of - cfg.text_window_days && d.t < as_of) pool.push_back(&d);
    }
    if (pool.empty()) return {};

    auto chunks = chunk_documents(pool, cfg.chunk_tokens, cfg.chunk_overlap);
    std::vector<RankedChunk> ranked;
    if (cfg.retriever == RetrieverKind::bm25) {
        Bm25Index index(chunks);
        ranked = rank_bm25(index, query_text, cfg.top_n_chunks);
    } else {
        if (!embedder) throw ConfigError("dense retrieval requires an embedder");
        ranked = rank_dense(chunks, query_text, *embedder, cfg.top_n_chunks);
    }
    std::vector<const Document*> out;
    std::unordered_set<std::int64_t> seen;
    for (const RankedChunk& rc : ranked) {
        const Chunk& c = chunks[rc.chunk_id];
        if (seen.insert(c.doc.value).second)
            if (const Document* d = ds.find_document(c.doc)) out.push_back(d);
    }
    return out;
}

inline std::vector<DatedText> summarize_documents(const std::vector<const Document*>& docs,
                                                  Gateway& gateway,
                                                  std::vector<std::string>& warnings) {
    std::vector<DatedText> out;
    for (const Document* d : docs) {
        std::string s;
        try {
            s = gateway.summarize_document(*d);
        } catch (const TransportError& e) {
            warnings.push_back("summary failed for document " + std::to_string(d->id.value) +
                               ": " + e.what());
            continue;
        }
        if (s.empty()) {
            warnings.push_back("empty summary for document " + std::to_string(d->id.value) +
                               ", skipped");
            continue;
        }
        out.push_back(DatedText{d->id, d->t, std::move(s)});
    }
    std::sort(out.begin(), out.end(), [](const DatedText& a, const DatedText& b) {
        return a.t != b.t ? a.t < b.t : a.doc.value < b.doc.value;
    });
    return out;
}

}  // namespace detail

/// Entity-filter pipeline: candidate set -> filter prompt -> kept entities ->
/// their recent in-scope events, newest first.
inline HistoryBundle build_retrieved_graph_history(const Dataset& ds, const Query& q,
                                                   const HistoryConfig& cfg, Gateway& gateway,
                                                   const PromptTemplate& filter_template =
                                                       default_entity_filter_template()) {
    check_query(q);
    check_history_config(cfg);
    HistoryBundle b;
    b.mode = HistoryMode::retrieved;
    b.format = cfg.format;
    b.scope = cfg.scope;
    if (cfg.scope == ScopeKind::none) return b;

    auto filtered = detail::run_entity_filter(ds, q, cfg, gateway, filter_template);
    b.candidates = std::move(filtered.candidates);
    b.filter_parse_failed = filtered.parse_failed;
    b.relevant_events = detail::relevant_events_for(ds, q, cfg, filtered.kept);
    return truncate_history(std::move(b), cfg.max_events, cfg.max_texts);
}

/// Chunk-retrieval pipeline: in-window documents are chunked and ranked
/// against the subject name; the top chunks' parent documents are summarized
/// and carried as dated texts, ascending in time.
inline HistoryBundle build_retrieved_text_history(const Dataset& ds, const Query& q,
                                                  const HistoryConfig& cfg, Gateway& gateway,
                                                  const Embedder* embedder = nullptr) {
    check_query(q);
    check_history_config(cfg);
    HistoryBundle b;
    b.mode = HistoryMode::retrieved;
    b.format = cfg.format;
    b.scope = cfg.scope;
    if (cfg.scope == ScopeKind::none) return b;

    GatewayEmbedder fallback(gateway);
    const Embedder* emb = embedder ? embedder : &fallback;
    auto docs = detail::retrieve_documents(ds, q, cfg, ds.entities().name_of(q.subject), emb);
    b.relevant_texts = detail::summarize_documents(docs, gateway, b.warnings);
    return truncate_history(std::move(b), cfg.max_events, cfg.max_texts);
}

/// Both retrieved views. The kept entity names join the subject in the
/// retrieval query, so the text side follows the entity filter.
inline HistoryBundle build_retrieved_mixed_history(const Dataset& ds, const Query& q,
                                                   const HistoryConfig& cfg, Gateway& gateway,
                                                   const Embedder* embedder = nullptr,
                                                   const PromptTemplate& filter_template =
                                                       default_entity_filter_template()) {
    check_query(q);
    check_history_config(cfg);
    HistoryBundle b;
    b.mode = HistoryMode::retrieved;
    b.format = cfg.format;
    b.scope = cfg.scope;
    if (cfg.scope == ScopeKind::none) return b;

    auto filtered = detail::run_entity_filter(ds, q, cfg, gateway, filter_template);
    b.candidates = std::move(filtered.candidates);
    b.filter_parse_failed = filtered.parse_failed;
    b.relevant_events = detail::relevant_events_for(ds, q, cfg, filtered.kept);

    std::string query_text = ds.entities().name_of(q.subject);
    for (const auto& item : filtered.kept) query_text += " " + item.name;

    GatewayEmbedder fallback(gateway);
    const Embedder* emb = embedder ? embedder : &fallback;
    auto docs = detail::retrieve_documents(ds, q, cfg, query_text, emb);
    b.relevant_texts = detail::summarize_documents(docs, gateway, b.warnings);
    return truncate_history(std::move(b), cfg.max_events, cfg.max_texts);
}

/// Build the bundle for the configured mode. `none` yields an empty bundle.
inline HistoryBundle build_history(const Dataset& ds, const Query& q, const HistoryConfig& cfg,
                                   Gateway* gateway = nullptr,
                                   SummaryProvider* summaries = nullptr,
                                   const Embedder* embedder = nullptr) {
    if (cfg.mode == HistoryMode::none) {
        HistoryBundle b;
        b.mode = HistoryMode::none;
        b.format = cfg.format;
        b.scope = cfg.scope;
        return b;
    }
    if (cfg.mode == HistoryMode::rule) {
        if (gateway && !summaries && cfg.format != HistoryFormat::graph) {
            GatewaySummaryProvider gsp(*gateway);
            return build_rule_history(ds, q, cfg, &gsp);
        }
        return build_rule_history(ds, q, cfg, summaries);
    }
    if (!gateway) throw ConfigError("retrieved history requires a gateway");
    switch (cfg.format) {
        case HistoryFormat::graph: return build_retrieved_graph_history(ds, q, cfg, *gateway);
        case HistoryFormat::text: return build_retrieved_text_history(ds, q, cfg, *gateway, embedder);
        case HistoryFormat::mixed:
            return build_retrieved_mixed_history(ds, q, cfg, *gateway, embedder);
    }
    throw DomainError("unreachable history format");
}

}  // namespace tef
