#include "groundkit/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

namespace groundkit {

std::int64_t DistanceHistogram::count_total() const {
    return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

double DistanceHistogram::percentage_total() const {
    return std::accumulate(percentages.begin(), percentages.end(), 0.0);
}

double round1(double value) {
    if (!std::isfinite(value)) return value;
    // Snap to integer micro-units first so decimal ties like 0.25 round the way they read.
    const long long micro = std::llround(value * 1e6);
    const long long mag = micro < 0 ? -micro : micro;
    const long long tenths = (mag + 50'000) / 100'000;
    return static_cast<double>(micro < 0 ? -tenths : tenths) / 10.0;
}

HitResult score_forward(const GroundingSample& sample, const ParsedTarget& parsed) {
    if (sample.direction != Direction::Forward) {
        throw Error(ErrorCode::WrongDirection, fmt::format("sample '{}' is not a forward sample", sample.sample_id));
    }
    HitResult r;
    r.sample_id = sample.sample_id;
    const auto point = to_click_point(parsed);
    if (!point) {
        r.parse_failed = true;
        return r;
    }
    r.hit = contains(sample.target, *point);
    r.distance_to_center = point_distance(*point, bbox_center(sample.target));
    return r;
}

namespace {

std::vector<std::string> lower_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    std::string tok;
    while (in >> tok) {
        std::transform(tok.begin(), tok.end(), tok.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        out.push_back(std::move(tok));
    }
    return out;
}

std::string join(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

double cross_entropy(std::span<const double> targets, std::span<const double> predictions) {
    if (targets.size() != predictions.size()) {
        throw Error(ErrorCode::LengthMismatch,
                    fmt::format("{} targets vs {} predictions", targets.size(), predictions.size()));
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double y = targets[i];
        const double p = predictions[i];
        if (y != 0.0 && y != 1.0) {
            throw Error(ErrorCode::InvalidArgument, fmt::format("target {} at index {} is not 0 or 1", y, i));
        }
        if (!(p >= 0.0 && p <= 1.0)) {
            throw Error(ErrorCode::ProbabilityOutOfRange, fmt::format("prediction {} at index {} outside [0,1]", p, i));
        }
        if ((p == 0.0 || p == 1.0) && p != y) {
            throw Error(ErrorCode::ProbabilityOutOfRange,
                        fmt::format("prediction {} at index {} is certain and wrong", p, i));
        }
        const double pos = y > 0.0 ? y * std::log(p) : 0.0;
        const double neg = (1.0 - y) > 0.0 ? (1.0 - y) * std::log(1.0 - p) : 0.0;
        loss -= pos + neg;
    }
    return loss == 0.0 ? 0.0 : loss; // no negative zero
}

} // namespace

ReverseScore score_reverse(const GroundingSample& sample, std::string_view predicted_description,
                           std::string_view reference) {
    if (sample.direction != Direction::Reverse) {
        throw Error(ErrorCode::WrongDirection, fmt::format("sample '{}' is not a reverse sample", sample.sample_id));
    }
    const auto ref = lower_tokens(reference);
    if (ref.empty()) throw Error(ErrorCode::InvalidArgument, "reverse reference description is empty");
    const auto pred = lower_tokens(predicted_description);
    ReverseScore s;
    if (pred.empty()) return s;
    s.exact = join(pred) == join(ref);

    std::unordered_map<std::string, int> ref_counts;
    for (const auto& t : ref) ++ref_counts[t];
    int overlap = 0;
    for (const auto& t : pred) {
        auto it = ref_counts.find(t);
        if (it != ref_counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return s;
    const double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
    const double recall = static_cast<double>(overlap) / static_cast<double>(ref.size());
    s.token_f1 = 2.0 * precision * recall / (precision + recall);
    return s;
}

double loss_forward(std::span<const double> targets, std::span<const double> predictions) {
    return cross_entropy(targets, predictions);
}

double loss_reverse(std::span<const double> targets, std::span<const double> predictions) {
    return cross_entropy(targets, predictions);
}

LossReport compute_losses(std::span<const double> coord_targets, std::span<const double> coord_predictions,
                          std::span<const double> token_targets, std::span<const double> token_predictions) {
    LossReport r;
    r.forward_loss = loss_forward(coord_targets, coord_predictions);
    r.reverse_loss = loss_reverse(token_targets, token_predictions);
    r.n_terms = static_cast<std::int64_t>(coord_targets.size() + token_targets.size());
    return r;
}

std::size_t distance_bucket(double distance) {
    for (std::size_t b = DistanceHistogram::kBuckets - 1; b > 0; --b) {
        if (distance >= DistanceHistogram::kLowerEdges[b]) return b;
    }
    return 0;
}

DistanceHistogram histogram_from_counts(const std::array<std::int64_t, DistanceHistogram::kBuckets>& counts,
                                        std::optional<std::int64_t> denominator) {
    DistanceHistogram h;
    h.counts = counts;
    for (auto c : counts) {
        if (c < 0) throw Error(ErrorCode::InvalidArgument, "histogram counts must be non-negative");
    }
    h.denominator = denominator.value_or(h.count_total());
    if (h.denominator < 0) throw Error(ErrorCode::InvalidArgument, "histogram denominator must be non-negative");
    if (h.denominator == 0) return h;
    for (std::size_t b = 0; b < DistanceHistogram::kBuckets; ++b) {
        h.percentages[b] = round1(static_cast<double>(counts[b]) / static_cast<double>(h.denominator) * 100.0);
    }
    return h;
}

DistanceHistogram error_histogram(std::span<const HitResult> misses) {
    std::array<std::int64_t, DistanceHistogram::kBuckets> counts{};
    for (const auto& m : misses) {
        if (!m.distance_to_center) {
            throw Error(ErrorCode::InvalidArgument,
                        fmt::format("miss '{}' has no distance; parse failures are counted separately", m.sample_id));
        }
        ++counts[distance_bucket(*m.distance_to_center)];
    }
    return histogram_from_counts(counts);
}

double table_average(std::span<const double> benchmark_scores) {
    if (benchmark_scores.empty()) return 0.0;
    const double sum = std::accumulate(benchmark_scores.begin(), benchmark_scores.end(), 0.0);
    return round1(sum / static_cast<double>(benchmark_scores.size()));
}

EvalReport evaluate_run(std::span<const GroundingSample> samples, std::span<const HitResult> results,
                        const std::map<std::string, std::string>& benchmark_of,
                        const std::string& default_benchmark) {
    if (samples.empty()) throw Error(ErrorCode::EmptyRun, "evaluation run has no samples");

    std::map<std::string, const GroundingSample*> by_id;
    for (const auto& s : samples) {
        if (s.direction != Direction::Forward) {
            throw Error(ErrorCode::WrongDirection, fmt::format("sample '{}' is not a forward sample", s.sample_id));
        }
        if (!by_id.emplace(s.sample_id, &s).second) {
            throw Error(ErrorCode::DuplicateSample, fmt::format("duplicate sample_id '{}'", s.sample_id));
        }
    }
    std::map<std::string, const HitResult*> result_of;
    for (const auto& r : results) {
        if (!by_id.count(r.sample_id)) {
            throw Error(ErrorCode::InvalidArgument, fmt::format("result for unknown sample '{}'", r.sample_id));
        }
        if (!result_of.emplace(r.sample_id, &r).second) {
            throw Error(ErrorCode::DuplicateSample, fmt::format("duplicate result for sample '{}'", r.sample_id));
        }
    }

    struct Tally {
        std::int64_t n = 0;
        std::int64_t hits = 0;
    };
    std::map<std::string, Tally> bench;
    std::map<std::string, Tally> category;
    std::vector<HitResult> misses;
    EvalReport report;

    for (const auto& [id, sample] : by_id) {
        auto found = result_of.find(id);
        if (found == result_of.end()) {
            throw Error(ErrorCode::MissingResult, fmt::format("no result for sample '{}'", id));
        }
        const HitResult& r = *found->second;
        auto b = benchmark_of.find(id);
        auto& bt = bench[b == benchmark_of.end() ? default_benchmark : b->second];
        auto& ct = category[sample->category.empty() ? std::string("uncategorized") : sample->category];
        ++bt.n;
        ++ct.n;
        ++report.totals.samples;
        if (r.hit) {
            ++bt.hits;
            ++ct.hits;
            ++report.totals.hits;
            continue;
        }
        ++report.totals.misses;
        if (r.parse_failed || !r.distance_to_center) {
            ++report.totals.parse_failures;
        } else {
            misses.push_back(r);
        }
    }

    auto pct = [](const Tally& t) { return round1(static_cast<double>(t.hits) / static_cast<double>(t.n) * 100.0); };
    std::vector<double> scores;
    for (const auto& [name, t] : bench) {
        report.per_benchmark[name] = pct(t);
        scores.push_back(report.per_benchmark[name]);
    }
    for (const auto& [name, t] : category) report.per_category[name] = pct(t);
    report.average = table_average(scores);
    report.histogram = error_histogram(misses);
    return report;
}

ReverseSummary summarize_reverse(std::span<const ReverseScore> scores) {
    ReverseSummary s;
    s.samples = static_cast<std::int64_t>(scores.size());
    if (scores.empty()) return s;
    double exact = 0.0;
    double f1 = 0.0;
    for (const auto& r : scores) {
        exact += r.exact ? 1.0 : 0.0;
        f1 += r.token_f1;
    }
    s.exact_match_pct = round1(exact / static_cast<double>(scores.size()) * 100.0);
    s.mean_token_f1 = std::round(f1 / static_cast<double>(scores.size()) * 1e4) / 1e4;
    return s;
}

} // namespace groundkit
