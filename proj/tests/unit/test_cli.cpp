#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <sstream>

#include <fmt/format.h>

#include "groundkit/cli.hpp"
#include "groundkit/metrics.hpp"
#include "groundkit/mock_server.hpp"
#include "groundkit/report.hpp"
#include "support/test_support.hpp"

using namespace groundkit;
using groundkit::testing::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;
};

Outcome run_cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    Outcome o;
    o.code = cli::run(args, out, err);
    o.out = out.str();
    o.err = err.str();
    return o;
}

std::map<std::string, MockReply> fixtures_from(const std::map<std::string, std::string>& replies) {
    std::map<std::string, MockReply> out;
    for (const auto& [id, text] : replies) out[id].reply = text;
    return out;
}

std::vector<std::string> eval_args(const fs::path& dataset, const fs::path& out, const std::string& endpoint,
                                   int parallel = 8) {
    return {"eval", "--dataset", dataset.string(), "--output", out.string(), "--endpoint", endpoint,
            "--model", "mock-model", "--parallel", std::to_string(parallel), "--backoff-ms", "1", "--timeout", "5"};
}

class ScopedEnv {
public:
    ScopedEnv(std::string name, const std::string& value) : name_(std::move(name)) { ::setenv(name_.c_str(), value.c_str(), 1); }
    ~ScopedEnv() { ::unsetenv(name_.c_str()); }
    ScopedEnv(const ScopedEnv&) = delete;
    ScopedEnv& operator=(const ScopedEnv&) = delete;

private:
    std::string name_;
};

} // namespace

TEST_CASE("help lists every flag and the README documents each one") {
    const auto readme = read_text_file(fs::path(GROUNDKIT_SOURCE_DIR) / "README.md");
    const auto inventory = cli::flag_inventory();
    CHECK(inventory.size() == 8);
    for (const auto& c : inventory) {
        const auto o = run_cli({c.command, "--help"});
        CHECK(o.code == 0);
        CHECK(readme.find("groundkit " + c.command) != std::string::npos);
        for (const auto& f : c.flags) {
            INFO(c.command << " " << f);
            CHECK(o.out.find(f) != std::string::npos);
            CHECK(readme.find("`" + f) != std::string::npos);
        }
    }
    CHECK(readme.find("`--config") != std::string::npos);
    const auto top = run_cli({"--help"});
    CHECK(top.code == 0);
    for (const auto& c : inventory) CHECK(top.out.find(c.command) != std::string::npos);
}

TEST_CASE("usage errors exit with the config code") {
    CHECK(run_cli({}).code == cli::kExitConfig);
    CHECK(run_cli({"frobnicate"}).code == cli::kExitConfig);
    CHECK(run_cli({"validate", "--bogus"}).code == cli::kExitConfig);
    CHECK(run_cli({"validate"}).code == cli::kExitConfig);
    CHECK(run_cli({"forge"}).code == cli::kExitConfig);
    CHECK(run_cli({"forge", "--run-config", "/nonexistent/run.json"}).code == cli::kExitConfig);
    CHECK(run_cli({"validate", "--manifest", "/nonexistent/m.jsonl"}).code == cli::kExitConfig);
    CHECK(run_cli({"report", "--input", "/nonexistent/report.json"}).code == cli::kExitConfig);
    CHECK(run_cli({"annotate-serve"}).code == cli::kExitConfig);
    CHECK(run_cli({"--version"}).code == 0);

    TempDir dir("gk-cli");
    write_file_atomic(dir / "bad.json", R"({"eval": {"no-such-flag": 1}})");
    CHECK(run_cli({"--config", (dir / "bad.json").string(), "validate", "--manifest", "x"}).code == cli::kExitConfig);
    write_file_atomic(dir / "typo.json", R"({"paralel": 2})");
    CHECK(run_cli({"--config", (dir / "typo.json").string(), "validate", "--manifest", "x"}).code == cli::kExitConfig);
    write_file_atomic(dir / "notjson.json", "{");
    CHECK(run_cli({"--config", (dir / "notjson.json").string(), "validate", "--manifest", "x"}).code == cli::kExitConfig);
}

TEST_CASE("validate, stats, split and import") {
    TempDir dir("gk-cli");
    auto fx = testing::make_benchmark_fixture(dir.path(), 40, 20);
    write_manifest(fx.manifest, dir / "bench.jsonl");

    auto v = run_cli({"validate", "--manifest", (dir / "bench.jsonl").string()});
    CHECK(v.code == 0);
    CHECK(v.out.find("ok") != std::string::npos);

    DatasetManifest empty;
    empty.name = "empty";
    write_manifest(empty, dir / "empty.jsonl");
    auto s = run_cli({"stats", "--manifest", (dir / "empty.jsonl").string(), "--json"});
    CHECK(s.code == 0);
    const auto stats = json::parse(s.out);
    CHECK(stats["assets"] == 0);
    CHECK(stats["samples"] == 0);
    CHECK(run_cli({"stats", "--manifest", (dir / "bench.jsonl").string()}).code == 0);

    // dangling sample: a validation failure
    auto broken = fx.manifest;
    broken.assets.erase(broken.assets.begin());
    write_file_atomic(dir / "broken.jsonl", serialize_manifest(broken));
    auto bad = run_cli({"validate", "--manifest", (dir / "broken.jsonl").string(), "--json"});
    CHECK(bad.code == cli::kExitValidation);
    CHECK_FALSE(json::parse(bad.out).empty());

    auto sp = run_cli({"split", "--manifest", (dir / "bench.jsonl").string(), "--output-dir", (dir / "parts").string(),
                       "--ratios", "train=0.5,test=0.5", "--seed", "3"});
    CHECK(sp.code == 0);
    const auto train = read_manifest(dir / "parts/train.jsonl");
    const auto test = read_manifest(dir / "parts/test.jsonl");
    CHECK(validate_dataset(train).ok());
    CHECK(validate_dataset(test).ok());
    CHECK(train.assets.size() + test.assets.size() == 6);
    CHECK(train.samples.size() + test.samples.size() == 40);
    for (const auto& a : train.assets) CHECK(test.find_asset(a.id) == nullptr);
    CHECK(run_cli({"split", "--manifest", (dir / "bench.jsonl").string(), "--output-dir", (dir / "parts2").string(),
                        "--ratios", "train=0.5,test=0.5", "--seed", "3"}).code == 0);
    CHECK(read_text_file(dir / "parts2/train.jsonl") == read_text_file(dir / "parts/train.jsonl"));
    CHECK(run_cli({"split", "--manifest", (dir / "bench.jsonl").string(), "--output-dir", (dir / "p3").string(),
                   "--ratios", "train"})
              .code == cli::kExitConfig);

    write_file_atomic(dir / "records.jsonl",
                      R"({"image": "img/shot0.png", "box": [10, 10, 60, 40], "caption": "Open settings"}
{"image": "img/shot1.png", "box": [0.1, 0.1, 0.3, 0.2], "caption": "Back", "category": "Browser"}
{"image": "img/missing.png", "box": [1, 1, 5, 5], "caption": "Gone"}
)");
    auto im = run_cli({"import", "--records", (dir / "records.jsonl").string(), "--output",
                       (dir / "imported.jsonl").string(), "--source", "demo"});
    CHECK(im.code == 0);
    CHECK(im.err.find("line 3") != std::string::npos);
    const auto imported = read_manifest(dir / "imported.jsonl");
    CHECK(imported.samples.size() == 2);
    CHECK(validate_dataset(imported).ok());
}

TEST_CASE("eval: 1052 samples with 591 hits reports 56.2%, rerun is free") {
    TempDir dir("gk-cli");
    auto fx = testing::make_benchmark_fixture(dir.path(), 1052, 591);
    write_manifest(fx.manifest, dir / "bench.jsonl");
    MockModelServer server(fixtures_from(fx.replies));
    server.start();

    const auto args = eval_args(dir / "bench.jsonl", dir / "run", server.base_url(), 16);
    auto first = run_cli(args);
    INFO(first.err);
    REQUIRE(first.code == 0);
    const auto report_bytes = read_text_file(dir / "run/report.json");
    const auto report = json::parse(report_bytes);
    CHECK(report["complete"] == true);
    const auto parsed = report_from_json(report);
    CHECK(std::abs(parsed.per_benchmark.at("bench") - 56.2) <= 0.05);
    CHECK(parsed.totals.samples == 1052);
    CHECK(parsed.totals.hits == 591);
    CHECK(report["provenance"]["config"]["model"] == "mock-model");
    CHECK(report["provenance"]["config"]["template"] == "default-forward");
    CHECK(read_text_file(dir / "run/report.txt").find("56.2") != std::string::npos);
    CHECK(json::parse(read_text_file(dir / "run/run.json"))["new_requests"] == 1052);

    const auto requests_before = server.gauge().requests;
    auto second = run_cli(args);
    CHECK(second.code == 0);
    CHECK(server.gauge().requests == requests_before);
    CHECK(json::parse(read_text_file(dir / "run/run.json"))["new_requests"] == 0);
    CHECK(read_text_file(dir / "run/report.json") == report_bytes);

    auto t = run_cli({"report", "--input", (dir / "run/report.json").string()});
    CHECK(t.code == 0);
    CHECK(t.out == read_text_file(dir / "run/report.txt"));
    auto j = run_cli({"report", "--input", (dir / "run/report.json").string(), "--format", "json"});
    CHECK(j.out == read_text_file(dir / "run/report.json"));
}

TEST_CASE("eval: reports are byte-stable and a second output dir gives identical bytes") {
    TempDir dir("gk-cli");
    auto fx = testing::make_benchmark_fixture(dir.path(), 120, 70);
    write_manifest(fx.manifest, dir / "bench.jsonl");
    MockModelServer a(fixtures_from(fx.replies));
    a.start();
    REQUIRE(run_cli(eval_args(dir / "bench.jsonl", dir / "r1", a.base_url(), 1)).code == 0);
    MockModelServer b(fixtures_from(fx.replies));
    b.start();
    REQUIRE(run_cli(eval_args(dir / "bench.jsonl", dir / "r2", b.base_url(), 16)).code == 0);
    for (const auto* f : {"report.json", "report.txt", "predictions.jsonl"}) {
        INFO(f);
        CHECK(read_text_file(dir / "r1" / f) == read_text_file(dir / "r2" / f));
    }
}

TEST_CASE("eval: failures map onto exit codes") {
    TempDir dir("gk-cli");
    auto fx = testing::make_benchmark_fixture(dir.path(), 12, 6);
    write_manifest(fx.manifest, dir / "bench.jsonl");

    auto down = run_cli({"eval", "--dataset", (dir / "bench.jsonl").string(), "--output", (dir / "down").string(),
                         "--endpoint", "http://127.0.0.1:1/v1", "--max-retries", "1", "--backoff-ms", "1", "--timeout", "1"});
    CHECK(down.code == cli::kExitEndpoint);
    CHECK_FALSE(fs::exists(dir / "down/report.json"));
    CHECK(json::parse(read_text_file(dir / "down/run.json"))["complete"] == false);

    auto broken = fx.manifest;
    broken.assets.erase(broken.assets.begin());
    write_file_atomic(dir / "broken.jsonl", serialize_manifest(broken));
    auto invalid = run_cli({"eval", "--dataset", (dir / "broken.jsonl").string(), "--output", (dir / "x").string()});
    CHECK(invalid.code == cli::kExitValidation);
    CHECK(invalid.err.find("validation") != std::string::npos);

    MockModelServer server(fixtures_from(fx.replies));
    server.start();
    auto args = eval_args(dir / "bench.jsonl", dir / "tmpl", server.base_url());
    args.insert(args.end(), {"--template", "no-such-template"});
    CHECK(run_cli(args).code == cli::kExitConfig);

    auto keyed = eval_args(dir / "bench.jsonl", dir / "key", server.base_url());
    keyed.insert(keyed.end(), {"--api-key-env", "GK_CLI_UNSET_KEY"});
    CHECK(run_cli(keyed).code == cli::kExitConfig);
}

TEST_CASE("eval: flags beat env, env beats the config file") {
    TempDir dir("gk-cli");
    auto fx = testing::make_benchmark_fixture(dir.path(), 10, 5);
    write_manifest(fx.manifest, dir / "bench.jsonl");
    MockModelServer server(fixtures_from(fx.replies));
    server.start();
    write_file_atomic(dir / "gk.json", json{{"eval",
                                             {{"model", "file-model"},
                                              {"endpoint", server.base_url()},
                                              {"dataset", (dir / "bench.jsonl").string()},
                                              {"parallel", 2},
                                              {"backoff-ms", 1}}}}
                                           .dump());
    const auto config = (dir / "gk.json").string();
    auto model_in = [&](const fs::path& out) {
        return json::parse(read_text_file(out / "report.json"))["provenance"]["config"]["model"].get<std::string>();
    };

    REQUIRE(run_cli({"--config", config, "eval", "--output", (dir / "a").string()}).code == 0);
    CHECK(model_in(dir / "a") == "file-model");
    CHECK(json::parse(read_text_file(dir / "a/run.json"))["config"]["parallel"] == 2);
    {
        ScopedEnv env("GROUNDKIT_MODEL", "env-model");
        REQUIRE(run_cli({"--config", config, "eval", "--output", (dir / "b").string()}).code == 0);
        CHECK(model_in(dir / "b") == "env-model");
        REQUIRE(run_cli({"--config", config, "eval", "--output", (dir / "c").string(), "--model", "flag-model"}).code == 0);
        CHECK(model_in(dir / "c") == "flag-model");
    }
    {
        ScopedEnv env("GROUNDKIT_PARALLEL", "many");
        CHECK(run_cli({"--config", config, "eval", "--output", (dir / "d").string()}).code == cli::kExitConfig);
    }
}

TEST_CASE("report renders a miss-distance table from a saved document") {
    TempDir dir("gk-cli");
    EvalReport r;
    r.histogram = histogram_from_counts({107, 177, 84, 52, 29, 9, 43}, 461);
    r.totals = {1052, 591, 461, 0};
    r.per_benchmark["combined"] = 56.2;
    r.average = 56.2;
    write_file_atomic(dir / "t2.json", render_report_json(r, json{{"config", {{"model", "fixture"}}}}));
    auto o = run_cli({"report", "--input", (dir / "t2.json").string()});
    CHECK(o.code == 0);
    for (const auto* pct : {"23.2%", "38.4%", "18.2%", "11.3%", "6.3%", "2.0%", "9.3%"}) {
        INFO(pct);
        CHECK(o.out.find(pct) != std::string::npos);
    }
    CHECK(o.out.find("fixture") != std::string::npos);
    CHECK(o.out.find("461") != std::string::npos);
    CHECK(run_cli({"report", "--input", (dir / "t2.json").string(), "--format", "yaml"}).code == cli::kExitConfig);
    write_file_atomic(dir / "junk.json", "[1,2");
    CHECK(run_cli({"report", "--input", (dir / "junk.json").string()}).code == cli::kExitValidation);
}

TEST_CASE("forge via the CLI writes a valid manifest and repeats byte-for-byte") {
    TempDir dir("gk-cli");
    testing::make_forge_inputs(dir.path());
    write_file_atomic(dir / "run.json", testing::forge_config_json("out").dump(2));
    auto first = run_cli({"forge", "--run-config", (dir / "run.json").string()});
    INFO(first.err);
    REQUIRE(first.code == 0);
    CHECK(validate_dataset(read_manifest(dir / "out/manifest.jsonl")).ok());
    auto second = run_cli({"forge", "--run-config", (dir / "run.json").string(), "--output-dir", (dir / "out2").string()});
    REQUIRE(second.code == 0);
    CHECK(read_text_file(dir / "out/manifest.jsonl") == read_text_file(dir / "out2/manifest.jsonl"));
    CHECK(run_cli({"forge", "--run-config", (dir / "run.json").string(), "--seed", "99"}).code != 0);

    auto bad = testing::forge_config_json("bad");
    bad["providers"]["aligner"] = {{"endpoint", {{"base_url", "http://127.0.0.1:1/v1"}, {"api_key_env", "GK_CLI_NOPE"}}}};
    write_file_atomic(dir / "bad.json", bad.dump());
    CHECK(run_cli({"forge", "--run-config", (dir / "bad.json").string()}).code == cli::kExitConfig);
    CHECK_FALSE(fs::exists(dir / "bad/journal.jsonl"));
}
