#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <set>

#include "tef/retrieval.hpp"

using namespace tef;
using Catch::Matchers::WithinAbs;

namespace {

std::vector<Chunk> corpus(std::vector<std::pair<std::string, std::int64_t>> texts) {
    std::vector<Chunk> out;
    for (std::size_t i = 0; i < texts.size(); ++i)
        out.push_back(Chunk{i, DocumentId{static_cast<std::int64_t>(i)},
                            RelativeDay{texts[i].second}, ComplexEventId{0}, 0, texts[i].first});
    return out;
}

// Independent BM25 oracle, computed straight from the formula.
double oracle_bm25(const std::vector<Chunk>& chunks, std::size_t target,
                   const std::string& query, double k1 = 1.2, double b = 0.75) {
    double n = static_cast<double>(chunks.size());
    double total = 0.0;
    for (const auto& c : chunks) total += static_cast<double>(text::index_terms(c.text).size());
    double avgdl = total / n;
    auto doc_terms = text::index_terms(chunks[target].text);
    double dl = static_cast<double>(doc_terms.size());
    double score = 0.0;
    for (const auto& q : text::index_terms(query)) {
        double df = 0.0;
        for (const auto& c : chunks) {
            auto ts = text::index_terms(c.text);
            if (std::find(ts.begin(), ts.end(), q) != ts.end()) df += 1.0;
        }
        double idf = std::max(0.0, std::log((n - df + 0.5) / (df + 0.5)));
        double f = static_cast<double>(std::count(doc_terms.begin(), doc_terms.end(), q));
        if (f > 0.0)
            score += idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * dl / avgdl));
    }
    return score;
}

}  // namespace

TEST_CASE("chunking windows and overlap") {
    std::string body = "t0 t1 t2 t3 t4 t5 t6 t7 t8 t9";
    auto chunks = chunk_text(body, 4, 1);
    REQUIRE(chunks.size() == 3);
    CHECK(chunks[0] == "t0 t1 t2 t3");
    CHECK(chunks[1] == "t3 t4 t5 t6");
    CHECK(chunks[2] == "t6 t7 t8 t9");

    CHECK(chunk_text("a b c", 150, 30).size() == 1);
    CHECK(chunk_text("", 150, 30).empty());
    CHECK_THROWS_AS(chunk_text("a", 10, 10), ConfigError);
    CHECK_THROWS_AS(chunk_text("a", 0, 0), ConfigError);

    // Property: windows cover every token; adjacent windows share `overlap`.
    auto more = chunk_text(body, 5, 2);
    std::size_t covered = 0;
    for (std::size_t i = 0; i < more.size(); ++i) {
        auto toks = text::whitespace_tokens(more[i]);
        if (i + 1 < more.size()) CHECK(toks.size() == 5);
        covered += toks.size() - (i + 1 < more.size() ? 2 : 0);
    }
    CHECK(covered == 10);
}

TEST_CASE("chunk_documents assigns corpus-wide ids") {
    Document d0{DocumentId{10}, RelativeDay{3}, ComplexEventId{7}, "a",
                "w1 w2 w3 w4 w5 w6", std::nullopt};
    Document d1{DocumentId{11}, RelativeDay{4}, ComplexEventId{8}, "b", "x1 x2", std::nullopt};
    std::vector<const Document*> docs{&d0, &d1};
    // chunk 4/overlap 1 over 6 tokens -> windows [0,4) [3,6): two chunks of
    // d0, then d1's single chunk.
    auto chunks = chunk_documents(docs, 4, 1);
    REQUIRE(chunks.size() == 3);
    CHECK(chunks[0].id == 0);
    CHECK(chunks[0].doc == DocumentId{10});
    CHECK(chunks[0].seq == 0);
    CHECK(chunks[0].complex_event == ComplexEventId{7});
    CHECK(chunks[1].id == 1);
    CHECK(chunks[1].t == RelativeDay{3});
    CHECK(chunks[1].seq == 1);
    CHECK(chunks[2].doc == DocumentId{11});
    CHECK(chunks[2].seq == 0);
    CHECK(chunks[2].complex_event == ComplexEventId{8});
    auto all = chunk_documents(docs, 6, 1);
    REQUIRE(all.size() == 2);
    CHECK(all[1].doc == DocumentId{11});
}

TEST_CASE("bm25 matches the formula oracle") {
    auto chunks = corpus({{"apple banana apple", 0}, {"banana cherry", 1},
                          {"cherry durian cherry cherry", 2}});
    Bm25Index index(chunks);

    SECTION("known value, zero-floored idf excludes majority terms") {
        auto hits = rank_bm25(index, "apple cherry", 10);
        // cherry appears in 2 of 3 chunks: idf = max(0, ln(1.5/2.5)) = 0, so
        // only chunk 0 scores above zero via "apple".
        REQUIRE(hits.size() == 1);
        CHECK(hits[0].chunk_id == 0);
        CHECK(hits[0].rank == 1);
        double expect = std::log(2.5 / 1.5) * 2.0 * 2.2 / (2.0 + 1.2);
        CHECK_THAT(hits[0].score, WithinAbs(expect, 1e-12));
        CHECK_THAT(hits[0].score, WithinAbs(oracle_bm25(chunks, 0, "apple cherry"), 1e-12));
    }

    SECTION("duplicate query terms add per occurrence") {
        auto once = rank_bm25(index, "apple", 10);
        auto twice = rank_bm25(index, "apple apple", 10);
        REQUIRE(once.size() == 1);
        REQUIRE(twice.size() == 1);
        CHECK_THAT(twice[0].score, WithinAbs(2.0 * once[0].score, 1e-12));
    }

    SECTION("oracle agreement across all chunks and queries") {
        for (std::string q : {"banana", "durian cherry", "apple banana cherry durian"}) {
            auto hits = rank_bm25(index, q, 10);
            std::map<std::size_t, double> got;
            for (auto& h : hits) got[h.chunk_id] = h.score;
            for (std::size_t i = 0; i < chunks.size(); ++i) {
                double expect = oracle_bm25(chunks, i, q);
                if (expect > 0.0) {
                    REQUIRE(got.count(i) == 1);
                    CHECK_THAT(got[i], WithinAbs(expect, 1e-12));
                } else {
                    CHECK(got.count(i) == 0);
                }
            }
        }
    }

    SECTION("no in-vocabulary terms yields empty result") {
        CHECK(rank_bm25(index, "zebra", 10).empty());
        CHECK(rank_bm25(index, "", 10).empty());
    }

    SECTION("top_k truncation keeps best; ranks are 1..n") {
        // Larger corpus so a term in two chunks keeps positive idf:
        // df=2, N=5 -> idf = ln(3.5/2.5) > 0.
        auto wide = corpus({{"banana split", 0}, {"banana bread", 1}, {"cherry pie", 2},
                            {"durian cake", 3}, {"apple tart", 4}});
        Bm25Index widx(wide);
        auto full = rank_bm25(widx, "banana", 10);
        REQUIRE(full.size() == 2);
        CHECK(full[0].score >= full[1].score);
        CHECK(full[0].rank == 1);
        CHECK(full[1].rank == 2);
        auto hits = rank_bm25(widx, "banana", 1);
        REQUIRE(hits.size() == 1);
        CHECK(hits[0].chunk_id == full[0].chunk_id);
    }
}

TEST_CASE("bm25 ties break by recency then chunk id") {
    // Filler chunks keep df("same words") at 3 of 8, so idf stays positive.
    auto chunks = corpus({{"same words here", 5}, {"same words here", 9},
                          {"same words here", 9}, {"other stuff", 1},
                          {"filler one", 0}, {"filler two", 0},
                          {"filler three", 0}, {"filler four", 0}});
    Bm25Index index(chunks);
    auto hits = rank_bm25(index, "same words", 10);
    REQUIRE(hits.size() == 3);
    CHECK(hits[0].chunk_id == 1);  // t=9, lower id first
    CHECK(hits[1].chunk_id == 2);  // t=9
    CHECK(hits[2].chunk_id == 0);  // t=5
    CHECK_THAT(hits[0].score, WithinAbs(hits[2].score, 1e-12));
}

TEST_CASE("hashing embedder is deterministic and normalized") {
    HashingEmbedder emb(64, 0);
    auto a = emb.embed("pakistan egypt trade talks");
    auto b = emb.embed("pakistan egypt trade talks");
    CHECK(a == b);
    double norm = 0.0;
    for (float x : a) norm += static_cast<double>(x) * x;
    CHECK_THAT(norm, WithinAbs(1.0, 1e-6));
    CHECK(emb.embed("").size() == 64);
    CHECK_THAT(cosine(a, a), WithinAbs(1.0, 1e-9));

    std::vector<float> zeros(64, 0.0f);
    CHECK(cosine(zeros, a) == 0.0);
    std::vector<float> small(32, 0.0f);
    CHECK_THROWS_AS(cosine(small, a), DomainError);
}

TEST_CASE("dense rank equals a brute-force cosine sort") {
    auto chunks = corpus({{"economic cooperation between egypt and pakistan", 3},
                          {"military drills in the strait", 4},
                          {"flood relief and humanitarian aid", 5},
                          {"egypt economy ministers meet", 6},
                          {"sports final in cairo", 7}});
    HashingEmbedder emb(128, 0);
    std::string q = "egypt pakistan economic cooperation";
    auto hits = rank_dense(chunks, q, emb, 10);
    REQUIRE_FALSE(hits.empty());
    CHECK(hits[0].chunk_id == 0);
    // 4 shared terms out of 6 in the chunk: cosine near 4/sqrt(4*6) ~ 0.82.
    CHECK(hits[0].score > 0.6);

    // Oracle: brute-force cosine of every chunk, same ordering rule.
    auto qv = emb.embed(q);
    std::vector<RankedChunk> expect;
    for (const auto& c : chunks) {
        double s = cosine(qv, emb.embed(c.text));
        if (s > 0.0) expect.push_back(RankedChunk{c.id, s, 0});
    }
    std::sort(expect.begin(), expect.end(), [&](const RankedChunk& a, const RankedChunk& b) {
        if (a.score != b.score) return a.score > b.score;
        if (chunks[a.chunk_id].t != chunks[b.chunk_id].t)
            return chunks[b.chunk_id].t < chunks[a.chunk_id].t;
        return a.chunk_id < b.chunk_id;
    });
    REQUIRE(hits.size() == expect.size());
    for (std::size_t i = 0; i < hits.size(); ++i) {
        CHECK(hits[i].chunk_id == expect[i].chunk_id);
        CHECK_THAT(hits[i].score, WithinAbs(expect[i].score, 1e-12));
        CHECK(hits[i].rank == i + 1);
    }
}

TEST_CASE("scope filtering") {
    struct Item {
        RelativeDay t;
        ComplexEventId complex_event;
        int tag;
    };
    std::vector<Item> items;
    for (int t = 90; t <= 101; ++t)
        for (int ce = 0; ce < 2; ++ce)
            items.push_back(Item{RelativeDay{t}, ComplexEventId{ce}, t * 10 + ce});

    Scope none{ScopeKind::none, std::nullopt, RelativeDay{100}, ComplexEventId{0}};
    CHECK(apply_scope(std::span<const Item>(items), none).empty());

    SECTION("windowed complex-event scope keeps [t-h, t)") {
        Scope s{ScopeKind::complex_event, 7, RelativeDay{100}, ComplexEventId{0}};
        auto got = apply_scope(std::span<const Item>(items), s);
        // Oracle: exhaustive filter.
        std::vector<const Item*> expect;
        for (const auto& it : items)
            if (it.t.days >= 93 && it.t.days <= 99 && it.complex_event == ComplexEventId{0})
                expect.push_back(&it);
        CHECK(got == expect);
        REQUIRE_FALSE(got.empty());
        for (auto* p : got) CHECK(p->t < RelativeDay{100});
    }

    SECTION("ce scope is a subset of global scope") {
        Scope g{ScopeKind::global, 7, RelativeDay{100}, ComplexEventId{0}};
        Scope c{ScopeKind::complex_event, 7, RelativeDay{100}, ComplexEventId{0}};
        auto gs = apply_scope(std::span<const Item>(items), g);
        auto cs = apply_scope(std::span<const Item>(items), c);
        std::set<const Item*> gset(gs.begin(), gs.end());
        for (auto* p : cs) CHECK(gset.count(p) == 1);
        CHECK(cs.size() < gs.size());
    }

    SECTION("item at the reference day is excluded") {
        Scope g{ScopeKind::global, std::nullopt, RelativeDay{100}, ComplexEventId{0}};
        auto got = apply_scope(std::span<const Item>(items), g);
        for (auto* p : got) CHECK(p->t < RelativeDay{100});
        // items at t=100 and t=101 exist but never appear
        CHECK(got.size() == 2u * 10u);
    }
}
