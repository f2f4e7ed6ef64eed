#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include <fmt/format.h>

#include "groundkit/image.hpp"
#include "groundkit/store.hpp"
#include "groundkit/util.hpp"

namespace groundkit {

using nlohmann::json;

json ValidationReport::to_json() const {
    json doc;
    doc["ok"] = ok();
    doc["violation_count"] = violations.size();
    doc["violations"] = json::array();
    for (const auto& v : violations) {
        doc["violations"].push_back(
            {{"code", v.code}, {"subject_kind", v.subject_kind}, {"subject_id", v.subject_id}, {"message", v.message}});
    }
    return doc;
}

std::string ValidationReport::summary() const {
    if (ok()) return "dataset valid: 0 violations\n";
    std::map<std::string, int> by_code;
    for (const auto& v : violations) ++by_code[v.code];
    std::string out = fmt::format("dataset invalid: {} violation(s)\n", violations.size());
    for (const auto& [code, n] : by_code) out += fmt::format("  {:<24} {}\n", code, n);
    for (const auto& v : violations) out += fmt::format("  - [{}] {} {}: {}\n", v.code, v.subject_kind, v.subject_id, v.message);
    return out;
}

ValidationReport validate_dataset(const DatasetManifest& manifest) {
    ValidationReport report;
    auto add = [&](std::string code, std::string kind, std::string id, std::string msg) {
        report.violations.push_back({std::move(code), std::move(kind), std::move(id), std::move(msg)});
    };
    for (const auto& issue : manifest.load_issues) report.violations.push_back(issue);

    std::set<std::string> asset_ids;
    for (const auto& a : manifest.assets) {
        if (a.id.empty()) add("missing-id", "asset", a.image_path, "asset has an empty id");
        if (!asset_ids.insert(a.id).second) add("duplicate-asset", "asset", a.id, "asset id appears more than once");
        if (a.width_px < 1 || a.height_px < 1) {
            add("invalid-dimensions", "asset", a.id, fmt::format("dimensions {}x{}", a.width_px, a.height_px));
        }
        if (a.privacy_flag) add("privacy-flagged", "asset", a.id, "privacy-flagged asset present in dataset");
        const auto path = manifest.resolve(a);
        const auto dims = image::probe(path);
        if (!dims) {
            add("unreadable-image", "asset", a.id, fmt::format("image '{}' missing or undecodable", path.string()));
            continue;
        }
        if (*dims != a.dims()) {
            add("dims-mismatch", "asset", a.id,
                fmt::format("recorded {}x{} but image is {}x{}", a.width_px, a.height_px, dims->width, dims->height));
        }
        if (sha256_file(path) != a.content_hash) {
            add("hash-mismatch", "asset", a.id, "content_hash does not match image bytes");
        }
    }

    std::set<std::string> sample_ids;
    for (const auto& s : manifest.samples) {
        if (!sample_ids.insert(s.sample_id).second) {
            add("duplicate-sample", "sample", s.sample_id, "sample_id appears more than once");
        }
        if (!asset_ids.count(s.asset_id)) {
            add("dangling-asset", "sample", s.sample_id, fmt::format("asset '{}' not in dataset", s.asset_id));
        }
        if (s.direction == Direction::Forward && trim(s.instruction).empty()) {
            add("empty-instruction", "sample", s.sample_id, "forward sample has an empty instruction");
        }
        if (!BoundingBox::is_valid(s.target.x1(), s.target.y1(), s.target.x2(), s.target.y2())) {
            add("invalid-target", "sample", s.sample_id, "target box violates its invariants");
        }
    }
    return report;
}

SplitResult split_dataset(const DatasetManifest& manifest,
                          const std::vector<std::pair<std::string, double>>& ratios, std::uint64_t seed) {
    if (ratios.empty()) throw Error(ErrorCode::InvalidArgument, "no split ratios given");
    double sum = 0.0;
    std::set<std::string> names;
    for (const auto& [name, r] : ratios) {
        if (!(r > 0.0)) throw Error(ErrorCode::InvalidArgument, fmt::format("ratio for '{}' must be positive", name));
        if (!names.insert(name).second) throw Error(ErrorCode::InvalidArgument, fmt::format("duplicate split '{}'", name));
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("split ratios sum to {} instead of 1", sum));
    }

    std::vector<std::string> ids;
    for (const auto& a : manifest.assets) ids.push_back(a.id);
    std::sort(ids.begin(), ids.end());
    // Fisher-Yates with a raw mt19937_64 draw: std::shuffle's output is library-specific.
    std::mt19937_64 rng(seed);
    for (std::size_t i = ids.size(); i > 1; --i) {
        std::swap(ids[i - 1], ids[rng() % i]);
    }

    const auto n = ids.size();
    std::vector<std::size_t> take(ratios.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < ratios.size(); ++k) {
        const double exact = ratios[k].second * static_cast<double>(n);
        take[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        assigned += take[k];
        remainders.emplace_back(exact - static_cast<double>(take[k]), k);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++take[remainders[r % remainders.size()].second];

    SplitResult result;
    std::map<std::string, std::string> split_of;
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < ratios.size(); ++k) {
        for (std::size_t j = 0; j < take[k]; ++j) split_of[ids[cursor++]] = ratios[k].first;
        if (take[k] == 0) result.warnings.push_back(fmt::format("split '{}' received no assets", ratios[k].first));
    }

    for (const auto& [name, _] : ratios) {
        DatasetManifest part;
        part.name = manifest.name + "-" + name;
        part.provenance = manifest.provenance;
        part.base_dir = manifest.base_dir;
        result.splits.emplace(name, std::move(part));
    }
    for (const auto& a : manifest.assets) result.splits[split_of[a.id]].assets.push_back(a);
    for (const auto& s : manifest.samples) {
        auto it = split_of.find(s.asset_id);
        if (it != split_of.end()) result.splits[it->second].samples.push_back(s);
    }
    return result;
}

json DatasetStats::to_json() const {
    json cats = json::array();
    for (const auto& [name, n] : per_category) cats.push_back({{"category", name}, {"samples", n}});
    return {{"assets", assets},
            {"samples", samples},
            {"per_category", cats},
            {"per_direction", per_direction},
            {"mean_samples_per_asset", mean_samples_per_asset}};
}

std::string DatasetStats::to_text() const {
    std::string out = fmt::format("assets: {}\nsamples: {}\nmean samples/asset: {:.2f}\n", assets, samples,
                                  mean_samples_per_asset);
    out += "by direction:\n";
    for (const auto& [dir, n] : per_direction) out += fmt::format("  {:<10} {}\n", dir, n);
    out += "by category:\n";
    for (const auto& [name, n] : per_category) out += fmt::format("  {:<24} {}\n", name, n);
    return out;
}

DatasetStats dataset_stats(const DatasetManifest& manifest) {
    DatasetStats st;
    st.assets = static_cast<std::int64_t>(manifest.assets.size());
    st.samples = static_cast<std::int64_t>(manifest.samples.size());
    st.per_direction["forward"] = 0;
    st.per_direction["reverse"] = 0;
    std::map<std::string, std::int64_t> cats;
    for (const auto& s : manifest.samples) {
        ++cats[s.category.empty() ? std::string("uncategorized") : s.category];
        ++st.per_direction[std::string(to_string(s.direction))];
    }
    st.per_category.assign(cats.begin(), cats.end());
    std::stable_sort(st.per_category.begin(), st.per_category.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    if (st.assets > 0) st.mean_samples_per_asset = static_cast<double>(st.samples) / static_cast<double>(st.assets);
    return st;
}

} // namespace groundkit
