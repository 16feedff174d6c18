#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>

#include "tef/dataset_io.hpp"

using namespace tef;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("tef_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

SyntheticSpec small_spec() {
    SyntheticSpec s;
    s.seed = 11;
    s.num_complex_events = 3;
    s.days_per_ce = 20;
    s.events_per_day = 3;
    s.entities_per_ce = 6;
    s.num_relations = 4;
    return s;
}

}  // namespace

TEST_CASE("synthetic generation is deterministic and valid") {
    auto a = generate_synthetic(small_spec());
    auto b = generate_synthetic(small_spec());
    CHECK(a == b);

    auto spec2 = small_spec();
    spec2.seed = 12;
    auto c = generate_synthetic(spec2);
    CHECK_FALSE(a == c);

    auto rep = validate_dataset(a);
    INFO(rep.to_text());
    CHECK(rep.ok());

    Dataset ds(std::move(a));
    CHECK(ds.event_count() == 3u * 20u * 3u);
    CHECK(ds.document_count() == 3u * 20u);
    REQUIRE(ds.splits().has_value());
    // every slice day belongs to exactly one split
    for (const auto& s : ds.slices()) CHECK(ds.split_of(s.t).has_value());
    CHECK(ds.splits()->train.first == ds.min_day());
    CHECK(ds.splits()->test.last == ds.max_day());
    CHECK(ds.splits()->train.last < ds.splits()->val.first);
    CHECK(ds.splits()->val.last < ds.splits()->test.first);
}

TEST_CASE("synthetic spec validation") {
    auto s = small_spec();
    s.entities_per_ce = 1;
    CHECK_THROWS_AS(generate_synthetic(s), ConfigError);
    s = small_spec();
    s.periodic_fraction = 0.8;
    s.copy_head_fraction = 0.4;
    CHECK_THROWS_AS(generate_synthetic(s), ConfigError);
    s = small_spec();
    s.train_fraction = 0.9;
    s.val_fraction = 0.2;
    CHECK_THROWS_AS(generate_synthetic(s), ConfigError);
}

TEST_CASE("dataset round-trips through ndjson") {
    auto dir = temp_dir("roundtrip");
    auto data = generate_synthetic(small_spec());
    auto manifest = save_dataset(data, dir, "synth-small");
    auto loaded = load_dataset_data(manifest);
    CHECK(loaded == data);
    fs::remove_all(dir);
}

TEST_CASE("loader reports file and line for malformed input") {
    auto dir = temp_dir("badjson");
    auto data = generate_synthetic(small_spec());
    auto manifest = save_dataset(data, dir);

    SECTION("syntax error") {
        std::ofstream(dir / "entities.ndjson", std::ios::app) << "{not json\n";
        try {
            load_dataset_data(manifest);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            std::string msg = e.what();
            CHECK(msg.find("entities.ndjson") != std::string::npos);
        }
    }
    SECTION("missing field") {
        std::ofstream(dir / "relations.ndjson", std::ios::app) << R"({"id": 99})" << "\n";
        try {
            load_dataset_data(manifest);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            std::string msg = e.what();
            CHECK(msg.find("relations.ndjson") != std::string::npos);
            CHECK(msg.find("name") != std::string::npos);
        }
    }
    SECTION("duplicate event id") {
        // append a copy of the first event line
        std::ifstream in(dir / "events.ndjson");
        std::string first;
        std::getline(in, first);
        in.close();
        std::ofstream(dir / "events.ndjson", std::ios::app) << first << "\n";
        auto d = load_dataset_data(manifest);
        CHECK(validate_dataset(d).count(Violation::Kind::duplicate_event_id) == 1);
    }
    fs::remove_all(dir);
}

TEST_CASE("temporal_split reassigns by timestamp only") {
    auto data = generate_synthetic(small_spec());
    data.splits.reset();
    RelativeDay lo = data.slices.front().t, hi = data.slices.back().t;
    RelativeDay mid{(lo.days + hi.days) / 2};

    SECTION("median boundary matches a brute-force repartition") {
        Splits b{{lo, mid}, {mid + 1, mid + 3}, {mid + 4, hi}};
        auto split_data = temporal_split(data, b);
        Dataset ds(std::move(split_data));
        std::size_t train = 0, val = 0, test = 0;
        ds.for_each_event([&](const AtomicEvent& e) {
            if (e.t <= mid)
                ++train;
            else if (e.t <= mid + 3)
                ++val;
            else
                ++test;
        });
        CHECK(ds.events_in_split(SplitName::train).size() == train);
        CHECK(ds.events_in_split(SplitName::val).size() == val);
        CHECK(ds.events_in_split(SplitName::test).size() == test);
        CHECK(train + val + test == ds.event_count());
    }

    SECTION("degenerate all-in-train leaves val and test empty") {
        Splits b{{lo, hi}, {hi + 1, hi}, {hi + 1, hi}};
        Dataset ds(temporal_split(data, b));
        CHECK(ds.events_in_split(SplitName::train).size() == ds.event_count());
        CHECK(ds.events_in_split(SplitName::val).empty());
        CHECK(ds.events_in_split(SplitName::test).empty());
    }

    SECTION("boundary outside the dataset range is rejected") {
        Splits b{{lo, mid}, {mid + 1, hi}, {hi + 100, hi + 200}};
        CHECK_THROWS_AS(temporal_split(data, b), DomainError);
    }

    SECTION("uncovered days are rejected") {
        Splits b{{lo, mid}, {mid + 2, mid + 3}, {mid + 4, hi}};  // gap at mid+1
        CHECK_THROWS_AS(temporal_split(data, b), DomainError);
    }

    SECTION("overlapping ranges are rejected") {
        Splits b{{lo, mid}, {mid, mid + 3}, {mid + 4, hi}};
        CHECK_THROWS_AS(temporal_split(data, b), DomainError);
    }
}

TEST_CASE("stats match a brute-force recount") {
    Dataset ds(generate_synthetic(small_spec()));
    auto st = compute_stats(ds);

    // Oracle: recount everything with independent loops over the slices.
    std::size_t events = 0;
    std::map<std::int64_t, std::size_t> freq;
    std::set<std::int64_t> ents, rels, ces;
    std::map<SplitName, std::size_t> split_events;
    ds.for_each_event([&](const AtomicEvent& e) {
        ++events;
        ++freq[e.subject.value];
        ++freq[e.object.value];
        ents.insert(e.subject.value);
        ents.insert(e.object.value);
        rels.insert(e.relation.value);
        ces.insert(e.complex_event.value);
        ++split_events[*ds.split_of(e.t)];
    });

    CHECK(st.total.events == events);
    CHECK(st.total.entities == ents.size());
    CHECK(st.total.relations == rels.size());
    CHECK(st.total.complex_events == ces.size());
    CHECK(st.total.documents == ds.document_count());
    REQUIRE(st.train);
    REQUIRE(st.val);
    REQUIRE(st.test);
    CHECK(st.train->events == split_events[SplitName::train]);
    CHECK(st.val->events == split_events[SplitName::val]);
    CHECK(st.test->events == split_events[SplitName::test]);
    CHECK(st.train->events + st.val->events + st.test->events == st.total.events);
    CHECK(st.train->documents + st.val->documents + st.test->documents == st.total.documents);

    // Frequency list: same multiset as the oracle, ordered (count desc, id asc).
    REQUIRE(st.entity_frequency.size() == freq.size());
    std::size_t freq_sum = 0;
    for (const auto& ec : st.entity_frequency) {
        CHECK(freq.at(ec.id.value) == ec.count);
        freq_sum += ec.count;
    }
    CHECK(freq_sum == 2 * events);  // each event contributes subject + object
    for (std::size_t i = 1; i < st.entity_frequency.size(); ++i) {
        const auto& a = st.entity_frequency[i - 1];
        const auto& b = st.entity_frequency[i];
        CHECK((a.count > b.count || (a.count == b.count && a.id < b.id)));
    }

    // Per-CE rows cover all events exactly once.
    std::size_t ce_events = 0, ce_docs = 0;
    for (const auto& row : st.per_ce) {
        ce_events += row.events;
        ce_docs += row.documents;
        CHECK(row.span == row.last - row.first + 1);
        CHECK(row.span >= 1);
    }
    CHECK(ce_events == events);
    CHECK(ce_docs == ds.document_count());

    // Monthly counts partition the events.
    std::size_t monthly = 0;
    for (const auto& m : st.monthly) monthly += m.events;
    CHECK(monthly == events);

    // JSON and text renderings exist and carry the headline number.
    auto j = stats_to_json(st);
    CHECK(j["total"]["events"].get<std::size_t>() == events);
    CHECK(stats_to_text(st, ds).find("total") != std::string::npos);
}

TEST_CASE("copy-head slots repeat the previous day's object") {
    auto spec = small_spec();
    spec.events_per_day = 1;
    spec.periodic_fraction = 0.0;
    spec.copy_head_fraction = 1.0;
    spec.copy_probability = 1.0;
    Dataset ds(generate_synthetic(spec));
    for (ComplexEventId ce : ds.complex_events().ids()) {
        const auto& evs = ds.events_of_ce(ce);
        REQUIRE(evs.size() == static_cast<std::size_t>(spec.days_per_ce));
        for (std::size_t i = 1; i < evs.size(); ++i) {
            CHECK(evs[i]->subject == evs[0]->subject);
            CHECK(evs[i]->object == evs[0]->object);
        }
    }
}

TEST_CASE("documents narrate their day's events") {
    Dataset ds(generate_synthetic(small_spec()));
    ds.for_each_event([&](const AtomicEvent& e) {
        REQUIRE(e.source_docs.size() == 1);
        const Document* doc = ds.find_document(e.source_docs[0]);
        REQUIRE(doc != nullptr);
        CHECK(doc->t == e.t);
        CHECK(doc->body.find(ds.entities().name_of(e.subject)) != std::string::npos);
        CHECK(doc->body.find(ds.entities().name_of(e.object)) != std::string::npos);
        CHECK(doc->body.find(ds.relations().name_of(e.relation)) != std::string::npos);
    });
}
