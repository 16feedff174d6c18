#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tef/core.hpp"
#include "tef/error.hpp"
#include "tef/rng.hpp"
#include "tef/text.hpp"

namespace tef {

/// A contiguous window of whitespace tokens from one document. `id` is the
/// position in the corpus-wide chunk list and is the final ranking
/// tie-breaker, so equal-score chunks resolve deterministically.
struct Chunk {
    std::size_t id{0};
    DocumentId doc;
    RelativeDay t{0};
    ComplexEventId complex_event;
    std::size_t seq{0};  // index of this chunk within its document
    std::string text;
};

/// Sliding token windows: `chunk_tokens` per window, consecutive windows
/// overlap by `overlap` tokens. The last window may be shorter; text at most
/// one window long yields a single chunk. Concatenating the windows with the
/// overlaps removed reproduces the token stream.
inline std::vector<std::string> chunk_text(std::string_view body, std::size_t chunk_tokens = 150,
                                           std::size_t overlap = 30) {
    if (chunk_tokens == 0) throw ConfigError("chunk_tokens must be positive");
    if (overlap >= chunk_tokens) throw ConfigError("overlap must be smaller than chunk_tokens");
    auto toks = text::whitespace_tokens(body);
    std::vector<std::string> out;
    if (toks.empty()) return out;
    std::size_t step = chunk_tokens - overlap;
    for (std::size_t start = 0;; start += step) {
        std::size_t end = std::min(start + chunk_tokens, toks.size());
        std::string chunk;
        for (std::size_t i = start; i < end; ++i) {
            if (i > start) chunk.push_back(' ');
            chunk.append(toks[i]);
        }
        out.push_back(std::move(chunk));
        if (end == toks.size()) break;
    }
    return out;
}

inline std::vector<Chunk> chunk_documents(std::span<const Document* const> docs,
                                          std::size_t chunk_tokens = 150,
                                          std::size_t overlap = 30) {
    std::vector<Chunk> out;
    std::size_t next = 0;
    for (const Document* d : docs) {
        auto pieces = chunk_text(d->body, chunk_tokens, overlap);
        for (std::size_t i = 0; i < pieces.size(); ++i)
            out.push_back(Chunk{next++, d->id, d->t, d->complex_event, i, std::move(pieces[i])});
    }
    return out;
}

struct RankedChunk {
    std::size_t chunk_id{0};
    double score{0.0};
    std::size_t rank{0};  // 1-based, no gaps

    bool operator==(const RankedChunk&) const = default;
};

struct Bm25Params {
    double k1{1.2};
    double b{0.75};
};

namespace detail {

/// Shared ordering contract for both retrievers: score desc, then day desc,
/// then chunk id asc; zero and negative scores dropped; ranks assigned 1..n.
inline std::vector<RankedChunk> order_hits(std::vector<RankedChunk> hits,
                                           const std::vector<Chunk>& chunks, std::size_t top_k) {
    std::sort(hits.begin(), hits.end(), [&](const RankedChunk& a, const RankedChunk& b) {
        if (a.score != b.score) return a.score > b.score;
        if (chunks[a.chunk_id].t != chunks[b.chunk_id].t)
            return chunks[b.chunk_id].t < chunks[a.chunk_id].t;
        return a.chunk_id < b.chunk_id;
    });
    if (hits.size() > top_k) hits.resize(top_k);
    for (std::size_t i = 0; i < hits.size(); ++i) hits[i].rank = i + 1;
    return hits;
}

}  // namespace detail

/// Okapi BM25 over a fixed chunk list. IDF is floored at zero, so terms in
/// more than half the corpus contribute nothing rather than a penalty.
/// Duplicate query terms count once per occurrence.
class Bm25Index {
public:
    explicit Bm25Index(std::vector<Chunk> chunks, Bm25Params params = {})
        : chunks_(std::move(chunks)), params_(params) {
        std::size_t total_len = 0;
        term_freq_.resize(chunks_.size());
        for (std::size_t i = 0; i < chunks_.size(); ++i) {
            auto terms = text::index_terms(chunks_[i].text);
            doc_len_.push_back(static_cast<double>(terms.size()));
            total_len += terms.size();
            for (auto& t : terms) ++term_freq_[i][t];
            for (auto& [t, _] : term_freq_[i]) ++doc_freq_[t];
        }
        avgdl_ = chunks_.empty() ? 0.0 : static_cast<double>(total_len) / chunks_.size();
    }

    const std::vector<Chunk>& chunks() const { return chunks_; }
    double avgdl() const { return avgdl_; }

    double idf(const std::string& term) const {
        auto it = doc_freq_.find(term);
        double df = it == doc_freq_.end() ? 0.0 : static_cast<double>(it->second);
        double n = static_cast<double>(chunks_.size());
        return std::max(0.0, std::log((n - df + 0.5) / (df + 0.5)));
    }

    double score(std::size_t chunk_id, const std::vector<std::string>& query_terms) const {
        double s = 0.0;
        const auto& tf = term_freq_[chunk_id];
        double len_norm =
            1.0 - params_.b + params_.b * (avgdl_ > 0 ? doc_len_[chunk_id] / avgdl_ : 0.0);
        for (const auto& term : query_terms) {
            auto it = tf.find(term);
            if (it == tf.end()) continue;
            double f = static_cast<double>(it->second);
            s += idf(term) * f * (params_.k1 + 1.0) / (f + params_.k1 * len_norm);
        }
        return s;
    }

private:
    std::vector<Chunk> chunks_;
    Bm25Params params_;
    std::vector<std::unordered_map<std::string, std::size_t>> term_freq_;
    std::unordered_map<std::string, std::size_t> doc_freq_;
    std::vector<double> doc_len_;
    double avgdl_{0.0};
};

inline std::vector<RankedChunk> rank_bm25(const Bm25Index& index, std::string_view query_text,
                                          std::size_t top_k) {
    auto terms = text::index_terms(query_text);
    std::vector<RankedChunk> hits;
    for (std::size_t i = 0; i < index.chunks().size(); ++i) {
        double s = index.score(i, terms);
        if (s > 0.0) hits.push_back(RankedChunk{i, s, 0});
    }
    return detail::order_hits(std::move(hits), index.chunks(), top_k);
}

// ---------------------------------------------------------------------------
// Embeddings

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::vector<float> embed(const std::string& text) const = 0;
};

/// Deterministic offline embedder: feature-hashed bag of index terms with a
/// signed hash, L2-normalized. No model weights, but identical texts map to
/// identical vectors and shared vocabulary raises cosine similarity.
class HashingEmbedder : public Embedder {
public:
    explicit HashingEmbedder(std::size_t dim = 64, std::uint64_t seed = 0)
        : dim_(dim), seed_(seed) {
        if (dim_ == 0) throw ConfigError("embedding dimension must be positive");
    }

    std::vector<float> embed(const std::string& text) const override {
        std::vector<float> v(dim_, 0.0f);
        for (const auto& term : text::index_terms(text)) {
            std::uint64_t h = hash_bytes(term, seed_);
            float sign = (h >> 63) ? -1.0f : 1.0f;
            v[h % dim_] += sign;
        }
        double norm = 0.0;
        for (float x : v) norm += static_cast<double>(x) * x;
        if (norm > 0.0) {
            auto inv = static_cast<float>(1.0 / std::sqrt(norm));
            for (float& x : v) x *= inv;
        }
        return v;
    }

    std::size_t dim() const { return dim_; }

private:
    std::size_t dim_;
    std::uint64_t seed_;
};

/// Cosine similarity; zero if either vector is all zeros.
inline double cosine(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw DomainError("cosine: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Dense ranking by cosine similarity; same ordering contract as rank_bm25.
inline std::vector<RankedChunk> rank_dense(const std::vector<Chunk>& chunks,
                                           std::string_view query_text, const Embedder& embedder,
                                           std::size_t top_k) {
    auto q = embedder.embed(std::string(query_text));
    std::vector<RankedChunk> hits;
    for (const auto& c : chunks) {
        double s = cosine(q, embedder.embed(c.text));
        if (s > 0.0) hits.push_back(RankedChunk{c.id, s, 0});
    }
    return detail::order_hits(std::move(hits), chunks, top_k);
}

// ---------------------------------------------------------------------------
// Scope filtering

enum class ScopeKind { none, global, complex_event };

inline const char* to_string(ScopeKind k) {
    switch (k) {
        case ScopeKind::none: return "none";
        case ScopeKind::global: return "global";
        case ScopeKind::complex_event: return "complex-event";
    }
    return "?";
}

/// What a retriever may look at, relative to a reference query: nothing, all
/// complex events, or only the query's own, optionally capped to the last
/// `window_days` before the reference day.
struct Scope {
    ScopeKind kind{ScopeKind::complex_event};
    std::optional<std::int64_t> window_days;
    RelativeDay reference_t{0};
    ComplexEventId reference_ce;
};

namespace detail {
template <class T>
bool scope_admits(const T& item, const Scope& s) {
    if (s.kind == ScopeKind::none) return false;
    if (!(item.t < s.reference_t)) return false;  // strict past, no exceptions
    if (s.window_days && item.t < s.reference_t - *s.window_days) return false;
    if (s.kind == ScopeKind::complex_event && item.complex_event != s.reference_ce) return false;
    return true;
}
}  // namespace detail

/// Filter timestamped items (anything with .t and .complex_event) to the
/// scope. Order is preserved.
template <class T>
std::vector<const T*> apply_scope(std::span<const T> items, const Scope& scope) {
    std::vector<const T*> out;
    for (const T& it : items)
        if (detail::scope_admits(it, scope)) out.push_back(&it);
    return out;
}

template <class T>
std::vector<const T*> apply_scope(std::span<const T* const> items, const Scope& scope) {
    std::vector<const T*> out;
    for (const T* it : items)
        if (detail::scope_admits(*it, scope)) out.push_back(it);
    return out;
}

}  // namespace tef
