#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "groundkit/coordparse.hpp"
#include "groundkit/core.hpp"

namespace groundkit {

struct HitResult {
    std::string sample_id;
    bool hit = false;
    std::optional<double> distance_to_center; // absent iff parse_failed
    bool parse_failed = false;
};

struct ReverseScore {
    bool exact = false;
    double token_f1 = 0.0;
};

/// Distances of misses to the target center, bucketed as
/// [0,0.1) [0.1,0.2) ... [0.5,0.6) [0.6,inf).
struct DistanceHistogram {
    static constexpr std::size_t kBuckets = 7;
    static constexpr std::array<double, kBuckets> kLowerEdges{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};

    std::array<std::int64_t, kBuckets> counts{};
    std::array<double, kBuckets> percentages{};
    std::int64_t denominator = 0; // misses the percentages are taken over

    std::int64_t count_total() const;
    double percentage_total() const;
};

struct RunTotals {
    std::int64_t samples = 0;
    std::int64_t hits = 0;
    std::int64_t misses = 0;
    std::int64_t parse_failures = 0;
};

/// Reverse-task aggregate. The exact/token-F1 pair is this toolkit's own
/// stand-in metric; reports label it as such.
struct ReverseSummary {
    std::int64_t samples = 0;
    double exact_match_pct = 0.0;
    double mean_token_f1 = 0.0;
};

struct EvalReport {
    std::map<std::string, double> per_benchmark; // accuracy %, one decimal
    std::map<std::string, double> per_category;
    double average = 0.0;
    DistanceHistogram histogram;
    RunTotals totals;
    std::optional<ReverseSummary> reverse;
};

struct LossReport {
    double forward_loss = 0.0;
    double reverse_loss = 0.0;
    std::int64_t n_terms = 0;
};

// Round half away from zero to one decimal, exact at decimal ties.
double round1(double value);

HitResult score_forward(const GroundingSample& sample, const ParsedTarget& parsed);

ReverseScore score_reverse(const GroundingSample& sample, std::string_view predicted_description,
                           std::string_view reference);

/// Binary cross-entropy -sum[y log p + (1-y) log(1-p)] with 0 log 0 := 0.
/// Targets must be 0 or 1; a prediction of exactly 0 or 1 is only allowed
/// when it equals its target.
double loss_forward(std::span<const double> targets, std::span<const double> predictions);

// Same formula over description-token indicator vectors.
double loss_reverse(std::span<const double> targets, std::span<const double> predictions);

LossReport compute_losses(std::span<const double> coord_targets, std::span<const double> coord_predictions,
                          std::span<const double> token_targets, std::span<const double> token_predictions);

std::size_t distance_bucket(double distance);

// Histogram over scored misses; every entry must carry a distance.
DistanceHistogram error_histogram(std::span<const HitResult> misses);

/// Builds a histogram from bucket counts. Percentages are count/denominator*100
/// with the denominator defaulting to the sum of the counts.
DistanceHistogram histogram_from_counts(const std::array<std::int64_t, DistanceHistogram::kBuckets>& counts,
                                        std::optional<std::int64_t> denominator = std::nullopt);

// Unweighted mean of per-benchmark accuracies, rounded to one decimal.
double table_average(std::span<const double> benchmark_scores);

/// Aggregates one run. `benchmark_of` maps sample_id to a benchmark name;
/// samples absent from it fall under `default_benchmark`.
EvalReport evaluate_run(std::span<const GroundingSample> samples, std::span<const HitResult> results,
                        const std::map<std::string, std::string>& benchmark_of = {},
                        const std::string& default_benchmark = "default");

ReverseSummary summarize_reverse(std::span<const ReverseScore> scores);

} // namespace groundkit
