#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <fstream>

#include "groundkit/gateway.hpp"
#include "groundkit/mock_server.hpp"
#include "support/test_support.hpp"

using namespace groundkit;
using groundkit::testing::TempDir;

namespace {

EndpointConfig fast_config(const MockModelServer& server, int parallel = 4) {
    EndpointConfig cfg;
    cfg.base_url = server.base_url();
    cfg.model_name = "mock";
    cfg.timeout_seconds = 10;
    cfg.max_retries = 3;
    cfg.max_parallel_requests = parallel;
    cfg.backoff_initial = std::chrono::milliseconds(1);
    return cfg;
}

std::map<std::string, MockReply> fixtures_from(const std::map<std::string, std::string>& replies) {
    std::map<std::string, MockReply> out;
    for (const auto& [id, text] : replies) out[id].reply = text;
    return out;
}

GroundingSample forward(std::string instruction) {
    GroundingSample s;
    s.sample_id = "s-1";
    s.direction = Direction::Forward;
    s.instruction = std::move(instruction);
    return s;
}

} // namespace

TEST_CASE("render_prompt builtin and custom templates") {
    const auto reg = TemplateRegistry::builtin();
    CHECK(render_prompt(reg.get(kDefaultForwardTemplate), forward("kill this program")) ==
          "I want to kill this program, where should I click to kill this program?");
    CHECK(render_prompt(reg.get("where-click"), forward("open Settings")) == "Where should I click to open Settings?");

    GroundingSample r;
    r.sample_id = "s-r";
    r.direction = Direction::Reverse;
    r.target = BoundingBox::make(0.3, 0.4, 0.5, 0.6);
    CHECK(render_prompt(reg.get(kDefaultReverseTemplate), r) == "What is the element at (0.400000, 0.500000)?");

    // braces inside the substituted instruction are not placeholders
    CHECK(render_prompt(reg.get("where-click"), forward("type {name}")) == "Where should I click to type {name}?");
}

TEST_CASE("render_prompt errors") {
    const auto reg = TemplateRegistry::builtin();
    GroundingSample r;
    r.direction = Direction::Reverse;
    CHECK_THROWS_AS(render_prompt(reg.get(kDefaultForwardTemplate), r), Error);

    PromptTemplate bad{"bad", Direction::Forward, "Click {instruction} near {widget}"};
    try {
        (void)render_prompt(bad, forward("x"));
        FAIL("expected template error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::TemplateError);
    }
    TemplateRegistry custom;
    CHECK_THROWS_AS(custom.add({"noinst", Direction::Forward, "Where?"}), Error);
    CHECK_THROWS_AS(custom.add({"noxy", Direction::Reverse, "What is at {x}?"}), Error);
    CHECK_THROWS_AS(reg.get("missing"), Error);
    CHECK_THROWS_AS(render_prompt(reg.get("where-click"), forward("   ")), Error);
}

TEST_CASE("endpoint config validation") {
    EndpointConfig cfg;
    cfg.max_parallel_requests = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = {};
    cfg.timeout_seconds = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = {};
    cfg.base_url = "ftp://x";
    CHECK_THROWS_AS(cfg.validate(), Error);
    CHECK_NOTHROW(EndpointConfig{}.validate());
    const auto t = split_url("http://127.0.0.1:9000/v1");
    CHECK(t.origin == "http://127.0.0.1:9000");
    CHECK(t.path == "/v1");
}

TEST_CASE("query_model passthrough, retry and exhaustion") {
    TempDir dir("gk-gw");
    const auto img = testing::write_png(dir / "a.png", testing::synthetic_screenshot(200, 120, 1));
    const auto asset = testing::asset_for(dir.path(), "a.png");

    std::map<std::string, MockReply> fx;
    fx["ok"].reply = "(0.52, 0.35)";
    fx["flaky"] = {"(0.1, 0.2)", 2, 500, 0, false};
    fx["limited"] = {"(0.1, 0.2)", 1, 429, 0, false};
    fx["down"] = {"", 0, 503, 0, true};
    fx["bad"] = {"", 0, 400, 0, true};
    MockModelServer server(fx);
    server.start();
    ChatClient client(fast_config(server));

    auto q = query_model(client, "where?", asset, img, "ok");
    CHECK(q.text == "(0.52, 0.35)");
    CHECK(q.attempts == 1);
    CHECK(q.sent_dims == asset.dims());

    CHECK(query_model(client, "where?", asset, img, "flaky").attempts == 3);
    CHECK(query_model(client, "where?", asset, img, "limited").attempts == 2);

    auto cfg2 = fast_config(server);
    cfg2.max_retries = 2;
    ChatClient two(cfg2);
    try {
        (void)query_model(two, "where?", asset, img, "down");
        FAIL("expected endpoint-unavailable");
    } catch (const EndpointError& e) {
        CHECK(e.code() == ErrorCode::EndpointUnavailable);
        CHECK(e.attempts() == 3);
    }
    CHECK(server.attempts_for("down") == 3);

    try {
        (void)query_model(client, "where?", asset, img, "bad");
        FAIL("expected request-rejected");
    } catch (const EndpointError& e) {
        CHECK(e.code() == ErrorCode::RequestRejected);
        CHECK(e.attempts() == 1);
    }

    try {
        (void)query_model(client, "where?", asset, dir / "missing.png", "ok");
        FAIL("expected asset error");
    } catch (const EndpointError&) {
        FAIL("wrong error type");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::AssetError);
    }

    // unknown id falls back to the default reply
    CHECK(query_model(client, "where?", asset, img, "nobody").text == "I cannot determine the location.");
}

TEST_CASE("query_model resize opt-in reports the dims actually sent") {
    TempDir dir("gk-gw");
    const auto img = testing::write_png(dir / "big.png", testing::synthetic_screenshot(1000, 500, 2));
    const auto asset = testing::asset_for(dir.path(), "big.png");
    MockModelServer server({{"r", {"(100px, 50px)", 0, 500, 0, false}}});
    server.start();
    auto cfg = fast_config(server);
    cfg.resize_longest_side = 200;
    const auto q = query_model(ChatClient(cfg), "where?", asset, img, "r");
    CHECK(q.sent_dims == Dimensions{200, 100});
    const auto parsed = parse_prediction(q.text, q.sent_dims);
    REQUIRE(parsed.point);
    CHECK(parsed.point->x == doctest::Approx(0.5));
}

TEST_CASE("unreachable endpoint exhausts retries") {
    EndpointConfig cfg;
    cfg.base_url = "http://127.0.0.1:1/v1";
    cfg.max_retries = 1;
    cfg.timeout_seconds = 2;
    cfg.backoff_initial = std::chrono::milliseconds(1);
    try {
        (void)ChatClient(cfg).complete("hi", {}, "x");
        FAIL("expected failure");
    } catch (const EndpointError& e) {
        CHECK(e.code() == ErrorCode::EndpointUnavailable);
        CHECK(e.attempts() == 2);
    }
}

TEST_CASE("api key travels only in the header and never lands in outputs") {
    TempDir dir("gk-gw");
    auto fx = testing::make_benchmark_fixture(dir.path(), 6, 3, 2);
    MockServerOptions opts;
    opts.required_api_key = "sk-test-SECRET-123";
    MockModelServer server(fixtures_from(fx.replies), opts);
    server.start();
    auto cfg = fast_config(server);
    cfg.api_key_env = "GK_TEST_API_KEY";

    ::unsetenv("GK_TEST_API_KEY");
    CHECK_THROWS_AS(run_benchmark(fx.manifest, ChatClient(cfg), TemplateRegistry::builtin().get("where-click")), Error);

    ::setenv("GK_TEST_API_KEY", "sk-test-SECRET-123", 1);
    RunOptions ro;
    ro.journal_path = dir / "journal.jsonl";
    const auto sum = run_benchmark(fx.manifest, ChatClient(cfg), TemplateRegistry::builtin().get("where-click"), ro);
    CHECK(sum.complete());
    CHECK(server.last_authorization() == "Bearer sk-test-SECRET-123");
    const auto journal = read_text_file(ro.journal_path);
    CHECK(journal.find("SECRET") == std::string::npos);
    CHECK(render_predictions(sum.predictions).find("SECRET") == std::string::npos);

    ::setenv("GK_TEST_API_KEY", "wrong", 1);
    const auto rejected = run_benchmark(fx.manifest, ChatClient(cfg), TemplateRegistry::builtin().get("where-click"));
    for (const auto& p : rejected.predictions) CHECK(p.error == "request-rejected");
    ::unsetenv("GK_TEST_API_KEY");
}

TEST_CASE("run_benchmark ordering, isolation and parse") {
    TempDir dir("gk-gw");
    auto fx = testing::make_benchmark_fixture(dir.path(), 3, 2, 3);
    // break one image after the manifest was built
    std::filesystem::remove(dir / fx.manifest.assets[2].image_path);

    MockModelServer server(fixtures_from(fx.replies));
    server.start();
    const auto sum =
        run_benchmark(fx.manifest, ChatClient(fast_config(server)), TemplateRegistry::builtin().get("where-click"));
    REQUIRE(sum.predictions.size() == 3);
    CHECK(std::is_sorted(sum.predictions.begin(), sum.predictions.end(),
                         [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; }));
    int asset_errors = 0;
    for (const auto& p : sum.predictions) {
        if (p.error == "asset-error") {
            ++asset_errors;
            CHECK_FALSE(p.parsed.ok());
            CHECK(p.sample_id == fx.manifest.samples[2].sample_id);
        } else {
            CHECK(p.error.empty());
            CHECK(p.parsed.ok());
            CHECK(p.attempt_count == 1);
        }
    }
    CHECK(asset_errors == 1);
}

TEST_CASE("run_benchmark is byte-stable across parallelism and bounded in flight") {
    TempDir dir("gk-gw");
    auto fx = testing::make_benchmark_fixture(dir.path(), 60, 30, 4);
    auto mock = fixtures_from(fx.replies);
    for (auto& [_, r] : mock) r.delay_ms = 5;
    MockModelServer server(mock);
    server.start();
    const auto& tmpl = TemplateRegistry::builtin().get(kDefaultForwardTemplate);

    std::string reference;
    for (int parallel : {1, 4, 16}) {
        server.reset_gauge();
        const auto sum = run_benchmark(fx.manifest, ChatClient(fast_config(server, parallel)), tmpl);
        CHECK(sum.complete());
        const auto text = render_predictions(sum.predictions);
        if (reference.empty()) reference = text;
        CHECK(text == reference);
        const auto g = server.gauge();
        CHECK(g.max_in_flight <= parallel);
        CHECK(g.requests == 60);
        if (parallel > 1) CHECK(g.max_in_flight > 1);
    }
    const auto back = parse_predictions(reference);
    CHECK(render_predictions(back) == reference);
}

TEST_CASE("run_benchmark resumes from the journal") {
    TempDir dir("gk-gw");
    auto fx = testing::make_benchmark_fixture(dir.path(), 40, 20, 4);
    MockModelServer server(fixtures_from(fx.replies));
    server.start();
    const auto& tmpl = TemplateRegistry::builtin().get(kDefaultForwardTemplate);
    ChatClient client(fast_config(server, 4));

    const auto full = render_predictions(run_benchmark(fx.manifest, client, tmpl).predictions);

    RunOptions ro;
    ro.journal_path = dir / "run" / "journal.jsonl";
    std::atomic<int> budget{15};
    ro.should_stop = [&] { return budget.fetch_sub(1) <= 0; };
    const auto first = run_benchmark(fx.manifest, client, tmpl, ro);
    CHECK(first.interrupted);
    CHECK(first.predictions.size() < 40);

    // simulate a torn final line left by a killed writer
    {
        std::ofstream out(ro.journal_path, std::ios::app);
        out << R"({"sample_id":"s-torn","raw_)";
    }
    server.reset_gauge();
    ro.should_stop = nullptr;
    const auto second = run_benchmark(fx.manifest, client, tmpl, ro);
    CHECK(second.complete());
    CHECK(second.resumed == static_cast<std::int64_t>(first.predictions.size()));
    CHECK(second.new_requests < 40);
    CHECK(server.gauge().requests == second.new_requests);
    CHECK(render_predictions(second.predictions) == full);

    // a third run has nothing left to ask
    const auto third = run_benchmark(fx.manifest, client, tmpl, ro);
    CHECK(third.new_requests == 0);
    CHECK(render_predictions(third.predictions) == full);
}

TEST_CASE("endpoint-unavailable samples are retried on rerun") {
    TempDir dir("gk-gw");
    auto fx = testing::make_benchmark_fixture(dir.path(), 4, 4, 2);
    auto mock = fixtures_from(fx.replies);
    const auto victim = fx.manifest.samples[1].sample_id;
    mock[victim].fail_first = 3;
    MockModelServer server(mock);
    server.start();
    auto cfg = fast_config(server, 2);
    cfg.max_retries = 1;
    RunOptions ro;
    ro.journal_path = dir / "j.jsonl";
    const auto& tmpl = TemplateRegistry::builtin().get("where-click");

    const auto first = run_benchmark(fx.manifest, ChatClient(cfg), tmpl, ro);
    CHECK(first.endpoint_failures == 1);
    CHECK_FALSE(first.complete());
    CHECK(first.predictions.size() == 4);
    const auto second = run_benchmark(fx.manifest, ChatClient(cfg), tmpl, ro);
    CHECK(second.new_requests == 1);
    CHECK(second.complete());
}
