#include "groundkit/report.hpp"

#include <algorithm>
#include <vector>

#include <fmt/format.h>

namespace groundkit {

using nlohmann::json;

namespace {

std::string bucket_label(std::size_t b) {
    const auto& edges = DistanceHistogram::kLowerEdges;
    if (b + 1 == DistanceHistogram::kBuckets) return fmt::format(">{:.1f}", edges[b]);
    return fmt::format("{:.1f} - {:.1f}", edges[b], edges[b + 1]);
}

} // namespace

json report_to_json(const EvalReport& report, const json& provenance, bool complete) {
    json doc;
    doc["format"] = kReportFormat;
    doc["complete"] = complete;
    doc["provenance"] = provenance;
    doc["per_benchmark"] = report.per_benchmark;
    doc["per_category"] = report.per_category;
    doc["average"] = report.average;
    doc["totals"] = {{"samples", report.totals.samples},
                     {"hits", report.totals.hits},
                     {"misses", report.totals.misses},
                     {"parse_failures", report.totals.parse_failures}};
    const auto& h = report.histogram;
    doc["histogram"] = {
        {"bucket_lower_edges", std::vector<double>(h.kLowerEdges.begin(), h.kLowerEdges.end())},
        {"intervals", "half-open [lo, hi); last bucket [0.6, inf)"},
        {"counts", std::vector<std::int64_t>(h.counts.begin(), h.counts.end())},
        {"percentages", std::vector<double>(h.percentages.begin(), h.percentages.end())},
        {"denominator", h.denominator},
    };
    if (report.reverse) {
        doc["reverse"] = {{"metric", "exact-match and token-F1 (stand-in metric)"},
                          {"samples", report.reverse->samples},
                          {"exact_match_pct", report.reverse->exact_match_pct},
                          {"mean_token_f1", report.reverse->mean_token_f1}};
    }
    return doc;
}

std::string render_report_json(const EvalReport& report, const json& provenance, bool complete) {
    return report_to_json(report, provenance, complete).dump(2) + "\n";
}

EvalReport report_from_json(const json& doc) {
    if (doc.value("format", std::string()) != kReportFormat) {
        throw Error(ErrorCode::UnsupportedVersion,
                    fmt::format("unsupported report format '{}'", doc.value("format", std::string())));
    }
    try {
        EvalReport r;
        r.per_benchmark = doc.at("per_benchmark").get<std::map<std::string, double>>();
        r.per_category = doc.at("per_category").get<std::map<std::string, double>>();
        r.average = doc.at("average").get<double>();
        const auto& t = doc.at("totals");
        r.totals.samples = t.at("samples").get<std::int64_t>();
        r.totals.hits = t.at("hits").get<std::int64_t>();
        r.totals.misses = t.at("misses").get<std::int64_t>();
        r.totals.parse_failures = t.at("parse_failures").get<std::int64_t>();
        const auto& h = doc.at("histogram");
        const auto counts = h.at("counts").get<std::vector<std::int64_t>>();
        const auto pcts = h.at("percentages").get<std::vector<double>>();
        if (counts.size() != DistanceHistogram::kBuckets || pcts.size() != DistanceHistogram::kBuckets) {
            throw Error(ErrorCode::ParseError, "histogram must have 7 buckets");
        }
        std::copy(counts.begin(), counts.end(), r.histogram.counts.begin());
        std::copy(pcts.begin(), pcts.end(), r.histogram.percentages.begin());
        r.histogram.denominator = h.at("denominator").get<std::int64_t>();
        if (doc.contains("reverse")) {
            const auto& rv = doc.at("reverse");
            r.reverse = ReverseSummary{rv.at("samples").get<std::int64_t>(), rv.at("exact_match_pct").get<double>(),
                                       rv.at("mean_token_f1").get<double>()};
        }
        return r;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, fmt::format("malformed report: {}", e.what()));
    }
}

std::string render_text_tables(const EvalReport& report, const std::string& method_name) {
    std::string out;

    std::vector<std::string> headers{"Method"};
    std::vector<std::string> row{method_name};
    for (const auto& [name, acc] : report.per_benchmark) {
        headers.push_back(name);
        row.push_back(fmt::format("{:.1f}%", acc));
    }
    headers.emplace_back("Avg");
    row.push_back(fmt::format("{:.1f}%", report.average));
    std::vector<std::size_t> widths;
    for (std::size_t i = 0; i < headers.size(); ++i) widths.push_back(std::max(headers[i].size(), row[i].size()));
    auto line = [&](const std::vector<std::string>& cells) {
        std::string l;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i == 0) {
                l += fmt::format("{:<{}}", cells[i], widths[i]);
            } else {
                l += fmt::format("  {:>{}}", cells[i], widths[i]);
            }
        }
        return l + "\n";
    };
    out += "Click accuracy\n";
    out += line(headers);
    out += line(row);
    out += fmt::format("samples={} hits={} misses={} parse_failures={}\n", report.totals.samples,
                       report.totals.hits, report.totals.misses, report.totals.parse_failures);

    if (!report.per_category.empty()) {
        out += "\nAccuracy by category\n";
        std::size_t w = 8;
        for (const auto& [name, _] : report.per_category) w = std::max(w, name.size());
        out += fmt::format("{:<{}}  {:>8}\n", "Category", w, "Accuracy");
        for (const auto& [name, acc] : report.per_category) {
            out += fmt::format("{:<{}}  {:>8}\n", name, w, fmt::format("{:.1f}%", acc));
        }
    }

    const auto& h = report.histogram;
    out += "\nDistribution of incorrect predictions by distance to target center\n";
    out += fmt::format("{:<20}  {:>9}  {:>9}\n", "Distance (units)", "Incorrect", "Total(%)");
    for (std::size_t b = 0; b < DistanceHistogram::kBuckets; ++b) {
        out += fmt::format("{:<20}  {:>9}  {:>9}\n", bucket_label(b), h.counts[b],
                           fmt::format("{:.1f}%", h.percentages[b]));
    }
    out += fmt::format("{:<20}  {:>9}  {:>9}\n", "Total", h.count_total(),
                       fmt::format("{:.1f}%", round1(h.percentage_total())));
    out += fmt::format("Buckets are half-open [lo, hi); percentages are over {} misses with a distance; "
                       "{} parse failures are counted as misses but not bucketed.\n",
                       h.denominator, report.totals.parse_failures);

    if (report.reverse) {
        out += fmt::format("\nReverse task (stand-in metric): samples={} exact={:.1f}% mean_token_f1={:.4f}\n",
                           report.reverse->samples, report.reverse->exact_match_pct, report.reverse->mean_token_f1);
    }
    return out;
}

} // namespace groundkit
