#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "tef/dataset_io.hpp"
#include "tef/runspec.hpp"

using namespace tef;

namespace {

std::filesystem::path fixtures() { return TEF_FIXTURES_DIR; }

std::filesystem::path scratch_dir(const std::string& stem) {
    auto p = std::filesystem::temp_directory_path() /
             (stem + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Run the real CLI binary; returns its exit code, captures stdout+stderr.
int run_cli(const std::string& args, std::string* output = nullptr) {
    auto log = std::filesystem::temp_directory_path() /
               ("cli-out-" + std::to_string(::getpid()) + ".log");
    std::string cmd = std::string(TEF_CLI_PATH) + " " + args + " >" + log.string() + " 2>&1";
    int status = std::system(cmd.c_str());
    if (output) *output = slurp(log);
    std::filesystem::remove(log);
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

RunSpec full_spec() {
    RunSpec s;
    s.manifest = "data/manifest.json";
    s.bank_path = "bank.ndjson";
    s.bank_split = SplitName::val;
    s.experiment.task = Task::relation_prediction;
    s.experiment.strategy = Strategy::global;
    s.experiment.bank_seed = 42;
    s.experiment.model_id = "m1";
    s.experiment.history.scope = ScopeKind::global;
    s.experiment.history.history_length_days = 7;
    s.backend = Backend::record;
    s.scripted_policy = ScriptedPolicy::fixed_label;
    s.scripted_label = 'C';
    s.record_transport = "scripted";
    s.cache_path = "cache.ndjson";
    s.out_dir = "out";
    s.max_in_flight = 2;
    s.max_retries = 1;
    s.retry_base_ms = 10;
    s.rate_per_sec = 5.0;
    s.sparsity_bins = 3;
    return s;
}

}  // namespace

TEST_CASE("run specs serialize and parse back exactly") {
    RunSpec s = full_spec();
    CHECK(runspec_from_json(runspec_to_json(s)) == s);

    SECTION("a partial document keeps the defaults for everything else") {
        auto j = nlohmann::json::parse(R"({
            "manifest": "m.json",
            "experiment": {"history": {"scope": "none"}}
        })");
        RunSpec p = runspec_from_json(j);
        CHECK(p.manifest == "m.json");
        CHECK(p.experiment.history.scope == ScopeKind::none);
        CHECK(p.experiment.history.history_length_days == 30);  // untouched default
        CHECK(p.experiment.task == Task::object_prediction);
        CHECK(p.backend == Backend::scripted);
        CHECK(p.sparsity_bins == 4);
    }

    SECTION("unknown top-level keys are rejected") {
        auto j = nlohmann::json::parse(R"({"manifset": "typo.json"})");
        CHECK_THROWS_AS(runspec_from_json(j), ConfigError);
    }
}

TEST_CASE("run spec validation enforces the backend invariants") {
    RunSpec s;
    s.manifest = "m.json";
    CHECK_NOTHROW(check_runspec(s));

    SECTION("record and replay need a cache path") {
        s.backend = Backend::record;
        CHECK_THROWS_AS(check_runspec(s), ConfigError);
        s.backend = Backend::replay;
        CHECK_THROWS_AS(check_runspec(s), ConfigError);
    }

    SECTION("replay needs the cache to exist") {
        s.backend = Backend::replay;
        s.cache_path = "/nonexistent/cache.ndjson";
        CHECK_THROWS_AS(check_runspec(s), ConfigError);
    }

    SECTION("scripted label must be a choice letter") {
        s.scripted_label = 'Z';
        CHECK_THROWS_AS(check_runspec(s), ConfigError);
    }

    SECTION("record transport is scripted or live") {
        s.backend = Backend::record;
        s.cache_path = "c.ndjson";
        s.record_transport = "carrier-pigeon";
        CHECK_THROWS_AS(check_runspec(s), ConfigError);
    }

    SECTION("experiment knobs are validated too") {
        s.experiment.history.horizon_days = 0;
        CHECK_THROWS_AS(check_runspec(s), ConfigError);
    }
}

TEST_CASE("bank sampling parameters project from the run spec") {
    RunSpec s = full_spec();
    BankConfig b = bank_config_of(s);
    CHECK(b.task == Task::relation_prediction);
    CHECK(b.strategy == Strategy::global);
    CHECK(b.seed == 42);
    CHECK(b.split == SplitName::val);
    CHECK(b.max_questions == s.experiment.max_questions);
}

TEST_CASE("the gateway factory honors the backend choice") {
    RunSpec s;
    s.manifest = "m.json";

    SECTION("scripted needs no environment and answers offline") {
        s.scripted_policy = ScriptedPolicy::fixed_label;
        s.scripted_label = 'D';
        Gateway gw = make_gateway(s);
        CHECK(gw.chat_complete("anything") == "D");
        CHECK(gw.config().cache_mode == CacheMode::off);
    }

    SECTION("record mode wraps the scripted transport by default") {
        auto dir = scratch_dir("runspec-record");
        s.backend = Backend::record;
        s.cache_path = dir / "cache.ndjson";
        s.scripted_policy = ScriptedPolicy::fixed_label;
        {
            Gateway gw = make_gateway(s);
            CHECK(gw.chat_complete("p") == "A");
        }
        CHECK(std::filesystem::exists(s.cache_path));

        SECTION("and replay then answers without any transport") {
            s.backend = Backend::replay;
            Gateway gw = make_gateway(s);
            auto out = gw.chat_complete_ex("p");
            CHECK(out.text == "A");
            CHECK(out.cache_hit);
        }
        std::filesystem::remove_all(dir);
    }
}

TEST_CASE("obtain_bank loads a stored bank or samples a fresh one") {
    Dataset ds = load_dataset(fixtures() / "synth1k" / "manifest.json");
    RunSpec s;
    s.manifest = fixtures() / "synth1k" / "manifest.json";
    s.experiment.strategy = Strategy::global;
    s.experiment.bank_seed = 9;

    auto sampled = obtain_bank(ds, s, nullptr);
    CHECK(sampled.size() == 90);  // one per test-split event

    auto dir = scratch_dir("runspec-bank");
    auto bank_file = dir / "bank.ndjson";
    save_question_bank(bank_file, sampled, bank_config_of(s), "synth1k");

    s.bank_path = bank_file;
    auto loaded = obtain_bank(ds, s, nullptr);
    REQUIRE(loaded.size() == sampled.size());
    CHECK(loaded[0].options == sampled[0].options);

    SECTION("a bank built for the other task is rejected") {
        s.experiment.task = Task::relation_prediction;
        CHECK_THROWS_AS(obtain_bank(ds, s, nullptr), ConfigError);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("cli: stats reproduces the frozen fixture statistics") {
    auto dir = scratch_dir("cli-stats");
    std::string out;
    int rc = run_cli("stats " + (fixtures() / "tiny50" / "manifest.json").string() +
                         " --out " + dir.string(),
                     &out);
    CHECK(rc == 0);
    CHECK(out.find("total          50") != std::string::npos);
    CHECK(slurp(dir / "stats.json") == slurp(fixtures() / "tiny50" / "expected_stats.json"));
    CHECK(slurp(dir / "stats.csv") == slurp(fixtures() / "tiny50" / "expected_stats.csv"));

    SECTION("synth1k matches too") {
        rc = run_cli("stats " + (fixtures() / "synth1k" / "manifest.json").string() +
                         " --out " + dir.string(),
                     &out);
        CHECK(rc == 0);
        CHECK(slurp(dir / "stats.json") ==
              slurp(fixtures() / "synth1k" / "expected_stats.json"));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("cli: a missing manifest exits 2 and names the path") {
    std::string out;
    int rc = run_cli("stats /no/such/manifest.json", &out);
    CHECK(rc == 2);
    CHECK(out.find("/no/such/manifest.json") != std::string::npos);
}

TEST_CASE("cli: validate accepts the fixtures") {
    std::string out;
    int rc = run_cli("validate " + (fixtures() / "synth1k" / "manifest.json").string(), &out);
    CHECK(rc == 0);
    CHECK(out.find("ok") != std::string::npos);
}

TEST_CASE("cli: run writes the full result layout and is reproducible") {
    auto dir = scratch_dir("cli-run");
    std::string manifest = (fixtures() / "tiny50" / "manifest.json").string();
    std::string base = "run --manifest " + manifest +
                       " --strategy global --bank-seed 4 --scripted-policy fixed-label"
                       " --scripted-label B --workers 1 --out ";

    REQUIRE(run_cli(base + (dir / "a").string()) == 0);
    REQUIRE(run_cli(base + (dir / "b").string()) == 0);

    for (const char* f : {"spec.resolved", "records.ndjson", "latencies.ndjson",
                          "summary.json", "breakdown.json", "breakdown.csv", "run_meta.json"})
        CHECK(std::filesystem::exists(dir / "a" / f));

    // Identical inputs -> identical stable outputs; wall-clock noise stays in
    // latencies.ndjson and run_meta.json.
    CHECK(slurp(dir / "a" / "records.ndjson") == slurp(dir / "b" / "records.ndjson"));
    CHECK(slurp(dir / "a" / "summary.json") == slurp(dir / "b" / "summary.json"));
    CHECK(slurp(dir / "a" / "breakdown.csv") == slurp(dir / "b" / "breakdown.csv"));
    auto spec_a = nlohmann::json::parse(slurp(dir / "a" / "spec.resolved"));
    auto spec_b = nlohmann::json::parse(slurp(dir / "b" / "spec.resolved"));
    spec_a.erase("out_dir");  // necessarily differs between the two runs
    spec_b.erase("out_dir");
    CHECK(spec_a == spec_b);

    SECTION("the resolved spec alone reruns the experiment") {
        std::string rerun = "run --spec " + (dir / "a" / "spec.resolved").string() +
                            " --out " + (dir / "c").string();
        REQUIRE(run_cli(rerun) == 0);
        CHECK(slurp(dir / "c" / "records.ndjson") == slurp(dir / "a" / "records.ndjson"));
        CHECK(slurp(dir / "c" / "summary.json") == slurp(dir / "a" / "summary.json"));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("cli: flags override the spec file which overrides the defaults") {
    auto dir = scratch_dir("cli-precedence");
    std::string manifest = (fixtures() / "tiny50" / "manifest.json").string();
    {
        nlohmann::json j{{"manifest", manifest},
                         {"experiment",
                          {{"strategy", "global"},
                           {"history", {{"history_length_days", 7}, {"scope", "global"}}}}},
                         {"scripted", {{"policy", "fixed-label"}}}};
        std::ofstream out(dir / "spec.json");
        out << j.dump(2);
    }
    int rc = run_cli("run --spec " + (dir / "spec.json").string() +
                     " --scope complex-event --out " + (dir / "r").string());
    REQUIRE(rc == 0);

    auto resolved = nlohmann::json::parse(slurp(dir / "r" / "spec.resolved"));
    CHECK(resolved["experiment"]["history"]["scope"] == "complex-event");  // flag wins
    CHECK(resolved["experiment"]["history"]["history_length_days"] == 7);  // file wins
    CHECK(resolved["experiment"]["history"]["horizon_days"] == 1);         // default
    CHECK(resolved["scripted"]["policy"] == "fixed-label");
    std::filesystem::remove_all(dir);
}

TEST_CASE("cli: make-bank reruns are byte-identical and generated needs a gateway") {
    auto dir = scratch_dir("cli-bank");
    std::string manifest = (fixtures() / "tiny50" / "manifest.json").string();
    std::string base = "make-bank --manifest " + manifest + " --strategy global --bank-seed 6";

    REQUIRE(run_cli(base + " --out-file " + (dir / "a.ndjson").string()) == 0);
    REQUIRE(run_cli(base + " --out-file " + (dir / "b.ndjson").string()) == 0);
    CHECK(slurp(dir / "a.ndjson") == slurp(dir / "b.ndjson"));

    SECTION("a run can then reuse the stored bank") {
        int rc = run_cli("run --manifest " + manifest + " --bank " +
                         (dir / "a.ndjson").string() +
                         " --scripted-policy fixed-label --out " + (dir / "r").string());
        CHECK(rc == 0);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("cli: sweep emits the axis table") {
    auto dir = scratch_dir("cli-sweep");
    std::string manifest = (fixtures() / "tiny50" / "manifest.json").string();
    int rc = run_cli("sweep --manifest " + manifest +
                     " --strategy global --axis scope --scripted-policy fixed-label --out " +
                     (dir / "s").string());
    REQUIRE(rc == 0);
    std::string csv = slurp(dir / "s" / "sweep.csv");
    CHECK(csv.rfind("axis_value,accuracy,invalid_rate,n\n", 0) == 0);
    CHECK(csv.find("\nnone,") != std::string::npos);
    CHECK(csv.find("\nglobal,") != std::string::npos);
    CHECK(csv.find("\ncomplex-event,") != std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST_CASE("cli: export-finetune writes one record per train event") {
    auto dir = scratch_dir("cli-ft");
    std::string manifest = (fixtures() / "tiny50" / "manifest.json").string();
    int rc = run_cli("export-finetune --manifest " + manifest +
                     " --strategy global --bank-seed 2 --out-file " +
                     (dir / "ft.ndjson").string());
    REQUIRE(rc == 0);
    std::string text = slurp(dir / "ft.ndjson");
    CHECK(std::count(text.begin(), text.end(), '\n') == 34);  // train events in tiny50

    SECTION("a retrieved-history config is refused") {
        std::string out;
        rc = run_cli("export-finetune --manifest " + manifest +
                         " --mode retrieved --out-file " + (dir / "no.ndjson").string(),
                     &out);
        CHECK(rc == 2);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("cli: report recomputes summaries from a run directory") {
    auto dir = scratch_dir("cli-report");
    std::string manifest = (fixtures() / "synth1k" / "manifest.json").string();
    REQUIRE(run_cli("run --manifest " + manifest +
                    " --strategy global --scripted-policy fixed-label --out " +
                    (dir / "r").string()) == 0);
    std::string before = slurp(dir / "r" / "summary.json");

    int rc = run_cli("report " + (dir / "r").string() + " --bins 2");
    CHECK(rc == 0);
    CHECK(slurp(dir / "r" / "summary.json") == before);  // same records, same summary
    auto breakdown = nlohmann::json::parse(slurp(dir / "r" / "breakdown.json"));
    CHECK(breakdown["groups"].size() <= 2);
    std::filesystem::remove_all(dir);
}
