#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "groundkit/metrics.hpp"
#include "groundkit/report.hpp"

using namespace groundkit;

namespace {

GroundingSample forward(std::string id, BoundingBox target, std::string category = "general") {
    GroundingSample s;
    s.sample_id = std::move(id);
    s.asset_id = "a-1";
    s.instruction = "open Settings";
    s.target = target;
    s.category = std::move(category);
    return s;
}

// Independent route: pick the likelihood of the observed label and sum its
// negative log in extended precision.
double oracle_bce(const std::vector<double>& y, const std::vector<double>& p) {
    long double total = 0.0L;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const long double likelihood = y[i] == 1.0 ? static_cast<long double>(p[i]) : 1.0L - static_cast<long double>(p[i]);
        total += -std::log(likelihood);
    }
    return static_cast<double>(total);
}

} // namespace

TEST_CASE("round1 rounds half away from zero at decimal ties") {
    CHECK(round1(0.25) == 0.3);
    CHECK(round1(0.35) == 0.4);
    CHECK(round1(-0.25) == -0.3);
    CHECK(round1(56.178707) == 56.2);
    CHECK(round1(2.0) == 2.0);
}

TEST_CASE("score_forward examples") {
    const auto s = forward("s1", BoundingBox::make(0.5, 0.3, 0.6, 0.4));
    auto r = score_forward(s, ParsedTarget::make_point({0.52, 0.35}));
    CHECK(r.hit);
    CHECK_FALSE(r.parse_failed);
    // Center is (0.55, 0.35): the distance is |0.52 - 0.55| = 0.03.
    CHECK(*r.distance_to_center == doctest::Approx(0.03).epsilon(1e-9));

    r = score_forward(s, ParsedTarget::make_failure(FailureReason::NoCoordinates));
    CHECK_FALSE(r.hit);
    CHECK(r.parse_failed);
    CHECK_FALSE(r.distance_to_center.has_value());

    r = score_forward(forward("s2", BoundingBox::make(0, 0, 1, 1)), ParsedTarget::make_point({0.99, 0.01}));
    CHECK(r.hit);

    auto rev = s;
    rev.direction = Direction::Reverse;
    CHECK_THROWS_AS(score_forward(rev, ParsedTarget::make_point({0.5, 0.5})), Error);
}

TEST_CASE("score_reverse examples") {
    GroundingSample s = forward("r1", BoundingBox::make(0, 0, 1, 1));
    s.direction = Direction::Reverse;
    auto r = score_reverse(s, "Settings icon", "Settings icon");
    CHECK(r.exact);
    CHECK(r.token_f1 == 1.0);
    r = score_reverse(s, "the settings icon", "Settings icon");
    CHECK_FALSE(r.exact);
    CHECK(r.token_f1 == doctest::Approx(2.0 * (2.0 / 3.0) * 1.0 / (2.0 / 3.0 + 1.0)));
    CHECK(r.token_f1 == doctest::Approx(0.8));
    r = score_reverse(s, "", "Close button");
    CHECK_FALSE(r.exact);
    CHECK(r.token_f1 == 0.0);
    r = score_reverse(s, "  SETTINGS   icon ", "settings icon");
    CHECK(r.exact);
    CHECK_THROWS_AS(score_reverse(forward("f", BoundingBox::make(0, 0, 1, 1)), "a", "b"), Error);
}

TEST_CASE("loss examples") {
    const std::vector<double> y2{1, 0}, p_perfect{1, 0}, p82{0.8, 0.2};
    CHECK(loss_forward(y2, p_perfect) == 0.0);
    CHECK(loss_forward(std::vector<double>{1}, std::vector<double>{0.5}) == doctest::Approx(0.693147).epsilon(1e-6));
    CHECK(loss_forward(y2, p82) == doctest::Approx(oracle_bce({1, 0}, {0.8, 0.2})).epsilon(1e-12));
    CHECK(loss_forward(y2, p82) == doctest::Approx(0.446287).epsilon(1e-6));

    CHECK(loss_reverse(std::vector<double>{1}, std::vector<double>{1}) == 0.0);
    CHECK(loss_reverse(std::vector<double>{0}, std::vector<double>{0.5}) == doctest::Approx(0.693147).epsilon(1e-6));
    CHECK(loss_reverse(std::vector<double>{1, 1, 0}, std::vector<double>{0.9, 0.9, 0.1}) ==
          doctest::Approx(-3.0 * std::log(0.9)).epsilon(1e-12));
    CHECK(loss_reverse(std::vector<double>{1, 1, 0}, std::vector<double>{0.9, 0.9, 0.1}) ==
          doctest::Approx(0.316082).epsilon(1e-6));
}

TEST_CASE("loss errors") {
    CHECK_THROWS_AS(loss_forward(std::vector<double>{1, 0}, std::vector<double>{0.5}), Error);
    CHECK_THROWS_AS(loss_forward(std::vector<double>{1}, std::vector<double>{1.2}), Error);
    CHECK_THROWS_AS(loss_forward(std::vector<double>{1}, std::vector<double>{0.0}), Error);
    CHECK_THROWS_AS(loss_forward(std::vector<double>{0.5}, std::vector<double>{0.5}), Error);
    const auto report = compute_losses(std::vector<double>{1, 0}, std::vector<double>{0.8, 0.2},
                                       std::vector<double>{1}, std::vector<double>{0.5});
    CHECK(report.n_terms == 3);
    CHECK(report.forward_loss > 0.0);
    CHECK(report.reverse_loss > 0.0);
}

TEST_CASE("property: losses are non-negative, zero only at the target, and monotone toward it") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.001, 0.999);
    std::bernoulli_distribution coin(0.5);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + trial % 9;
        std::vector<double> y(n), p(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = coin(rng) ? 1.0 : 0.0;
            p[i] = u(rng);
        }
        const double l = loss_forward(y, p);
        REQUIRE(l > 0.0);
        REQUIRE(std::abs(l - oracle_bce(y, p)) <= 1e-9);
        REQUIRE(loss_forward(y, y) == 0.0);

        const std::size_t k = trial % n;
        auto closer = p;
        closer[k] = p[k] + 0.5 * (y[k] - p[k]);
        REQUIRE(loss_reverse(y, closer) < loss_reverse(y, p));
    }
}

TEST_CASE("error_histogram buckets are half-open") {
    auto miss = [](double d) { return HitResult{"m", false, d, false}; };
    std::vector<HitResult> one{miss(0.05)};
    auto h = error_histogram(one);
    CHECK(h.counts == std::array<std::int64_t, 7>{1, 0, 0, 0, 0, 0, 0});
    std::vector<HitResult> edge{miss(0.1)};
    h = error_histogram(edge);
    CHECK(h.counts == std::array<std::int64_t, 7>{0, 1, 0, 0, 0, 0, 0});
    std::vector<HitResult> far{miss(0.6), miss(1.3), miss(0.5999)};
    h = error_histogram(far);
    CHECK(h.counts == std::array<std::int64_t, 7>{0, 0, 0, 0, 0, 1, 2});
    h = error_histogram(std::vector<HitResult>{});
    CHECK(h.count_total() == 0);
    CHECK(h.percentage_total() == 0.0);
    std::vector<HitResult> bad{HitResult{"x", false, std::nullopt, true}};
    CHECK_THROWS_AS(error_histogram(bad), Error);
}

TEST_CASE("histogram percentages over the distribution counts") {
    const auto h = histogram_from_counts({107, 177, 84, 52, 29, 9, 43}, 461);
    const std::array<double, 7> expected{23.2, 38.4, 18.2, 11.3, 6.3, 2.0, 9.3};
    for (std::size_t b = 0; b < 7; ++b) CHECK(h.percentages[b] == doctest::Approx(expected[b]).epsilon(1e-12));
    const auto self = histogram_from_counts({1, 1, 2, 0, 0, 0, 0});
    CHECK(self.denominator == 4);
    CHECK(self.percentage_total() == doctest::Approx(100.0));
}

TEST_CASE("table_average reproduces the published average column") {
    const std::vector<std::pair<std::array<double, 3>, double>> rows{
        {{6.2, 2.9, 1.7}, 3.6},    {{20.2, 11.8, 18.3}, 16.8}, {{35.5, 12.9, 16.5}, 21.6},
        {{10.0, 4.3, 5.9}, 6.7},   {{33.0, 3.6, 9.4}, 15.3},   {{74.2, 20.0, 13.3}, 35.8},
        {{72.2, 30.0, 15.7}, 39.3}, {{60.4, 29.1, 47.3}, 45.6}, {{66.5, 45.6, 56.2}, 56.1},
    };
    for (const auto& [scores, avg] : rows) {
        CHECK(std::abs(table_average(scores) - avg) <= 0.05);
        auto perm = scores;
        std::reverse(perm.begin(), perm.end());
        CHECK(table_average(perm) == table_average(scores));
    }
}

TEST_CASE("evaluate_run totals and errors") {
    std::vector<GroundingSample> samples;
    std::vector<HitResult> results;
    for (int i = 0; i < 1052; ++i) {
        samples.push_back(forward(fmt::format("s{:04}", i), BoundingBox::make(0.4, 0.4, 0.6, 0.6)));
        if (i < 591) {
            results.push_back({samples.back().sample_id, true, 0.0, false});
        } else {
            results.push_back({samples.back().sample_id, false, 0.3, false});
        }
    }
    std::reverse(results.begin(), results.end());
    const auto report = evaluate_run(samples, results, {}, "desktop");
    CHECK(report.per_benchmark.at("desktop") == doctest::Approx(56.2));
    CHECK(report.average == doctest::Approx(56.2));
    CHECK(report.totals.misses == 461);
    CHECK(report.histogram.count_total() == 461);

    CHECK_THROWS_AS(evaluate_run(std::vector<GroundingSample>{}, std::vector<HitResult>{}), Error);
    auto dup = samples;
    dup.push_back(samples.front());
    CHECK_THROWS_AS(evaluate_run(dup, results), Error);
    auto missing = results;
    missing.pop_back();
    CHECK_THROWS_AS(evaluate_run(samples, missing), Error);
}

TEST_CASE("evaluate_run: parse failures count against accuracy but are not bucketed") {
    std::vector<GroundingSample> samples{forward("a", BoundingBox::make(0.1, 0.1, 0.2, 0.2), "x"),
                                         forward("b", BoundingBox::make(0.1, 0.1, 0.2, 0.2), "y"),
                                         forward("c", BoundingBox::make(0.1, 0.1, 0.2, 0.2), "y")};
    std::vector<HitResult> results{score_forward(samples[0], ParsedTarget::make_point({0.15, 0.15})),
                                   score_forward(samples[1], ParsedTarget::make_failure(FailureReason::NoCoordinates)),
                                   score_forward(samples[2], ParsedTarget::make_point({0.9, 0.9}))};
    const auto r = evaluate_run(samples, results, {{"c", "other"}}, "main");
    CHECK(r.per_benchmark.at("main") == 50.0);
    CHECK(r.per_benchmark.at("other") == 0.0);
    CHECK(r.average == 25.0);
    CHECK(r.per_category.at("x") == 100.0);
    CHECK(r.per_category.at("y") == 0.0);
    CHECK(r.totals.parse_failures == 1);
    CHECK(r.histogram.count_total() == 1);
    CHECK(r.histogram.counts[6] == 1);
}

TEST_CASE("property: evaluate_run agrees with a brute-force containment recount") {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<GroundingSample> samples;
    std::vector<HitResult> results;
    std::int64_t brute_hits = 0;
    for (int i = 0; i < 10000; ++i) {
        double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
        if (a == b || c == d) continue;
        const double x1 = std::min(a, b), x2 = std::max(a, b), y1 = std::min(c, d), y2 = std::max(c, d);
        const ClickPoint p{u(rng), u(rng)};
        samples.push_back(forward(fmt::format("s{:05}", i), BoundingBox::make(x1, y1, x2, y2)));
        results.push_back(score_forward(samples.back(), ParsedTarget::make_point(p)));
        const bool inside = !(p.x < x1) && !(p.x > x2) && !(p.y < y1) && !(p.y > y2);
        brute_hits += inside ? 1 : 0;
        REQUIRE(results.back().hit == inside);
    }
    const auto r = evaluate_run(samples, results);
    CHECK(r.totals.hits == brute_hits);
    CHECK(r.histogram.count_total() == r.totals.misses - r.totals.parse_failures);
}

TEST_CASE("report json is stable and round-trips") {
    std::vector<GroundingSample> samples{forward("a", BoundingBox::make(0.1, 0.1, 0.2, 0.2))};
    std::vector<HitResult> results{{"a", false, 0.25, false}};
    auto r = evaluate_run(samples, results, {}, "desktop");
    r.reverse = ReverseSummary{3, 33.3, 0.5};
    const nlohmann::json prov{{"model", "m"}, {"temperature", 0.0}};
    const auto first = render_report_json(r, prov);
    CHECK(first == render_report_json(r, prov));
    const auto back = report_from_json(nlohmann::json::parse(first));
    CHECK(render_report_json(back, prov) == first);
    const auto text = render_text_tables(back, "m");
    CHECK(text.find("desktop") != std::string::npos);
    CHECK(text.find("0.2 - 0.3") != std::string::npos);
    CHECK(text.find("stand-in") != std::string::npos);
}
