#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "tef/dataset_io.hpp"
#include "tef/finetune.hpp"

using namespace tef;

namespace {

Dataset synth(std::uint64_t seed = 21) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.num_complex_events = 2;
    spec.days_per_ce = 14;
    spec.events_per_day = 2;
    spec.ce_start_stride = 0;
    return Dataset(generate_synthetic(spec));
}

/// Options parsed back out of a rendered input's [Options] block.
std::vector<std::string> options_in(const std::string& input) {
    std::vector<std::string> out;
    auto pos = input.rfind("[Options]");
    REQUIRE(pos != std::string::npos);
    std::istringstream lines(input.substr(pos));
    std::string line;
    std::getline(lines, line);  // the header itself
    while (std::getline(lines, line)) {
        if (line.size() < 4 || line[1] != '.' || line[0] < 'A' || line[0] > 'F') break;
        out.push_back(line.substr(3));
    }
    return out;
}

std::filesystem::path temp_file(const std::string& stem) {
    return std::filesystem::temp_directory_path() /
           (stem + "-" + std::to_string(::getpid()) + ".ndjson");
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("finetune export emits one record per split event") {
    Dataset ds = synth();
    HistoryConfig hist;  // rule / graph / complex-event scope
    BankConfig bank;
    bank.strategy = Strategy::history;
    bank.seed = 5;

    auto records = export_finetune_records(ds, SplitName::train, hist, bank);
    auto train_events = ds.events_in_split(SplitName::train);
    REQUIRE(records.size() == train_events.size());
    REQUIRE(records.size() >= 10);

    SECTION("every output appears verbatim among its input's options") {
        for (const auto& r : records) {
            auto opts = options_in(r.input);
            REQUIRE(opts.size() == 6);
            CHECK(std::count(opts.begin(), opts.end(), r.output) == 1);
        }
    }

    SECTION("outputs are the gold answers of the generating events") {
        for (std::size_t i = 0; i < records.size(); ++i)
            CHECK(records[i].output == ds.entities().name_of(train_events[i]->object));
    }

    SECTION("the instruction is fixed and placeholder-free; inputs start at the query") {
        for (const auto& r : records) {
            CHECK(r.instruction == records.front().instruction);
            CHECK(r.instruction.find('{') == std::string::npos);
            CHECK(r.instruction.find("event forecasting") != std::string::npos);
            CHECK(r.input.rfind("[Query]\n(", 0) == 0);
        }
    }

    SECTION("graph format inputs carry quadruple history lines") {
        bool saw_history = false;
        for (const auto& r : records)
            if (r.input.find("[Nearest Events]\n(") != std::string::npos) saw_history = true;
        CHECK(saw_history);
    }

    SECTION("export is deterministic") {
        CHECK(export_finetune_records(ds, SplitName::train, hist, bank) == records);
    }

    SECTION("max_questions caps the export") {
        auto capped_bank = bank;
        capped_bank.max_questions = 3;
        auto capped = export_finetune_records(ds, SplitName::train, hist, capped_bank);
        REQUIRE(capped.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) CHECK(capped[i] == records[i]);
    }
}

TEST_CASE("finetune export works offline for text-format histories") {
    Dataset ds = synth();
    HistoryConfig hist;
    hist.format = HistoryFormat::text;
    BankConfig bank;
    bank.strategy = Strategy::global;
    bank.seed = 2;
    bank.max_questions = 6;

    auto records = export_finetune_records(ds, SplitName::train, hist, bank);
    REQUIRE(records.size() == 6);
    bool saw_dated = false;
    for (const auto& r : records) {
        if (r.input.find("[Date]") != std::string::npos) saw_dated = true;
        CHECK(options_in(r.input).size() == 6);
    }
    CHECK(saw_dated);
}

TEST_CASE("finetune export rejects non-rule history configs") {
    Dataset ds = synth();
    BankConfig bank;

    HistoryConfig retrieved;
    retrieved.mode = HistoryMode::retrieved;
    CHECK_THROWS_AS(export_finetune_records(ds, SplitName::train, retrieved, bank), ConfigError);

    HistoryConfig none;
    none.mode = HistoryMode::none;
    CHECK_THROWS_AS(export_finetune_records(ds, SplitName::train, none, bank), ConfigError);
}

TEST_CASE("finetune export of an eventless split is empty") {
    DatasetData d;
    d.epoch = parse_date("2021-01-01");
    for (int i = 0; i < 6; ++i) d.entities.add(EntityId{i}, "E" + std::to_string(i));
    d.relations.add(RelationId{0}, "meet");
    d.complex_events.add(ComplexEventId{0}, "CE");
    std::vector<AtomicEvent> events = {AtomicEvent{EventId{0}, EntityId{0}, RelationId{0},
                                                   EntityId{1}, RelativeDay{10},
                                                   ComplexEventId{0}, {}}};
    d.slices = build_slices(events, {});
    d.splits = Splits{{RelativeDay{0}, RelativeDay{4}},
                      {RelativeDay{5}, RelativeDay{9}},
                      {RelativeDay{10}, RelativeDay{10}}};
    Dataset ds(std::move(d));

    HistoryConfig hist;
    BankConfig bank;
    CHECK(export_finetune_records(ds, SplitName::train, hist, bank).empty());
}

TEST_CASE("finetune records round-trip through NDJSON") {
    Dataset ds = synth();
    HistoryConfig hist;
    BankConfig bank;
    bank.max_questions = 4;
    auto records = export_finetune_records(ds, SplitName::train, hist, bank);
    REQUIRE(records.size() == 4);

    auto p1 = temp_file("ft-a");
    auto p2 = temp_file("ft-b");
    save_finetune_records(p1, records);
    CHECK(load_finetune_records(p1) == records);
    save_finetune_records(p2, records);
    CHECK(slurp(p1) == slurp(p2));
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}
