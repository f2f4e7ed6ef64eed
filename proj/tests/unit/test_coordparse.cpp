#include <doctest.h>

#include <fstream>
#include <random>
#include <string>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "groundkit/coordparse.hpp"

using namespace groundkit;

TEST_CASE("parse_prediction: documented examples") {
    auto t = parse_prediction("(0.52, 0.35)");
    REQUIRE(t.kind == TargetKind::Point);
    CHECK(t.point->x == 0.52);
    CHECK(t.point->y == 0.35);
    CHECK(t.source_span == SourceSpan{0, 12});

    t = parse_prediction("click at x=204, y=312", Dimensions{408, 624});
    REQUIRE(t.kind == TargetKind::Point);
    CHECK(t.point->x == 0.5);
    CHECK(t.point->y == 0.5);

    t = parse_prediction("The button is at [0.2, 0.3, 0.6, 0.7]");
    REQUIRE(t.kind == TargetKind::Box);
    CHECK(*t.box == BoundingBox::make(0.2, 0.3, 0.6, 0.7));

    t = parse_prediction("I cannot determine the location.");
    REQUIRE(t.kind == TargetKind::Failure);
    CHECK(t.failure_reason == FailureReason::NoCoordinates);
}

TEST_CASE("parse_prediction: failure classification") {
    CHECK(parse_prediction("").failure_reason == FailureReason::NoCoordinates);
    CHECK(parse_prediction("(0..5, 0.3)").failure_reason == FailureReason::MalformedNumbers);
    CHECK(parse_prediction("x=1.2.3, y=0.4").failure_reason == FailureReason::MalformedNumbers);
    CHECK(parse_prediction("(512, 384)").failure_reason == FailureReason::OutOfRangeUnrecoverable);
    // First group wins even when it cannot be normalized.
    CHECK(parse_prediction("(512, 384) or (0.5, 0.5)").failure_reason == FailureReason::OutOfRangeUnrecoverable);
    // Set-of-mark style element ids are not guessed at.
    CHECK(parse_prediction("Click element [7]").failure_reason == FailureReason::NoCoordinates);
}

TEST_CASE("parse_prediction: clamps and thresholds") {
    auto t = parse_prediction("(1.5, 0.2)");
    REQUIRE(t.kind == TargetKind::Point);
    CHECK(t.point->x == 1.0);
    t = parse_prediction("(1.51, 0.2)", Dimensions{100, 100});
    REQUIRE(t.kind == TargetKind::Point);
    CHECK(t.point->x == doctest::Approx(0.0151));
    CHECK(t.point->y == doctest::Approx(0.002));
    t = parse_prediction("(-0.2, 0.3)");
    CHECK(t.point->x == 0.0);
    t = parse_prediction("(2000, 100)", Dimensions{1000, 1000});
    CHECK(t.point->x == 1.0);
    CHECK(t.point->y == doctest::Approx(0.1));
}

TEST_CASE("to_click_point") {
    CHECK(*to_click_point(ParsedTarget::make_point({0.52, 0.35})) == ClickPoint{0.52, 0.35});
    const auto c = *to_click_point(ParsedTarget::make_box(BoundingBox::make(0.2, 0.3, 0.6, 0.7)));
    CHECK(c.x == doctest::Approx(0.4));
    CHECK(c.y == doctest::Approx(0.5));
    CHECK_FALSE(to_click_point(ParsedTarget::make_failure(FailureReason::NoCoordinates)).has_value());
}

TEST_CASE("fixture corpus: every record parses to its expected target") {
    std::ifstream in(std::string(GROUNDKIT_FIXTURE_DIR) + "/parser_corpus.jsonl");
    REQUIRE(in.good());
    std::string line;
    int total = 0, ok = 0, failures = 0, classified = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto rec = nlohmann::json::parse(line);
        std::optional<Dimensions> dims;
        if (!rec["dims"].is_null()) dims = Dimensions{rec["dims"][0].get<std::int64_t>(), rec["dims"][1].get<std::int64_t>()};
        const auto raw = rec["raw"].get<std::string>();
        const auto got = parse_prediction(raw, dims);
        const auto& exp = rec["expect"];
        ++total;
        INFO("reply: " << raw);
        REQUIRE(to_string(got.kind) == exp["kind"].get<std::string>());
        if (got.kind == TargetKind::Point) {
            CHECK(got.point->x == doctest::Approx(exp["point"][0].get<double>()).epsilon(1e-9));
            CHECK(got.point->y == doctest::Approx(exp["point"][1].get<double>()).epsilon(1e-9));
        } else if (got.kind == TargetKind::Box) {
            CHECK(got.box->x1() == doctest::Approx(exp["box"][0].get<double>()));
            CHECK(got.box->y1() == doctest::Approx(exp["box"][1].get<double>()));
            CHECK(got.box->x2() == doctest::Approx(exp["box"][2].get<double>()));
            CHECK(got.box->y2() == doctest::Approx(exp["box"][3].get<double>()));
        } else {
            ++failures;
            if (got.failure_reason) ++classified;
            CHECK(to_string(*got.failure_reason) == exp["reason"].get<std::string>());
        }
        if (got.ok()) ++ok;
    }
    CHECK(total == 50);
    CHECK(static_cast<double>(ok) / total >= 0.95);
    CHECK(classified == failures);
}

TEST_CASE("property: six-decimal rendering round-trips") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 10000; ++i) {
        const ClickPoint p{u(rng), u(rng)};
        const auto t = parse_prediction(fmt::format("({:.6f}, {:.6f})", p.x, p.y));
        REQUIRE(t.kind == TargetKind::Point);
        REQUIRE(std::abs(t.point->x - p.x) <= 1e-6);
        REQUIRE(std::abs(t.point->y - p.y) <= 1e-6);
    }
}

TEST_CASE("property: deterministic and stable under digit-free prose prefixes") {
    std::ifstream in(std::string(GROUNDKIT_FIXTURE_DIR) + "/parser_corpus.jsonl");
    std::vector<nlohmann::json> recs;
    std::string line;
    while (std::getline(in, line)) recs.push_back(nlohmann::json::parse(line));
    REQUIRE(!recs.empty());

    const std::string alphabet = "abcdefghijklmnopqrstuvwxyz ABCDEFGHIJ.,;:!?'\"-()[]{}=\n";
    std::mt19937_64 rng(22);
    std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1), len(0, 60);
    for (int i = 0; i < 2000; ++i) {
        const auto& rec = recs[static_cast<std::size_t>(i) % recs.size()];
        std::optional<Dimensions> dims;
        if (!rec["dims"].is_null()) dims = Dimensions{rec["dims"][0].get<std::int64_t>(), rec["dims"][1].get<std::int64_t>()};
        const auto raw = rec["raw"].get<std::string>();
        std::string prose;
        for (std::size_t k = 0, n = len(rng); k < n; ++k) prose += alphabet[pick(rng)];
        prose += ' ';

        const auto base = parse_prediction(raw, dims);
        const auto again = parse_prediction(raw, dims);
        REQUIRE(base.kind == again.kind);
        REQUIRE(base.source_span == again.source_span);

        const auto prefixed = parse_prediction(prose + raw, dims);
        INFO("prose: [" << prose << "] reply: [" << raw << "]");
        REQUIRE(prefixed.kind == base.kind);
        REQUIRE(prefixed.point == base.point);
        REQUIRE(prefixed.box == base.box);
        REQUIRE(prefixed.failure_reason == base.failure_reason);
    }
}
