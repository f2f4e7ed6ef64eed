#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "groundkit/core.hpp"

namespace groundkit {

inline constexpr int kManifestFormatVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

struct Provenance {
    std::string run_id;
    std::uint64_t seed = 0;
    std::string tool_version = kToolVersion;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct Violation {
    std::string code;         // e.g. "dangling-asset", "dims-mismatch"
    std::string subject_kind; // "asset", "sample", "line"
    std::string subject_id;
    std::string message;
};

/// A dataset: screenshots plus the samples that point into them.
///
/// `base_dir` is where relative image paths resolve; it is not serialized.
/// `load_issues` holds records a lenient read had to drop (bad geometry,
/// bad dimensions); validation reports them as violations.
struct DatasetManifest {
    int format_version = kManifestFormatVersion;
    std::string name;
    std::vector<ScreenshotAsset> assets;
    std::vector<GroundingSample> samples;
    Provenance provenance;

    std::filesystem::path base_dir;
    std::vector<Violation> load_issues;

    const ScreenshotAsset* find_asset(const std::string& id) const;
    std::filesystem::path resolve(const ScreenshotAsset& asset) const;

    // Content equality independent of record order; ignores base_dir and load_issues.
    friend bool operator==(const DatasetManifest& a, const DatasetManifest& b);
};

enum class ReadMode { Strict, Lenient };

/// Canonical line-delimited form: a header line, assets sorted by id, then
/// samples sorted by sample_id. Coordinates use six fixed decimals. Assets
/// flagged for privacy are never written, nor are samples pointing at them.
std::string serialize_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(std::string_view text, ReadMode mode = ReadMode::Strict);

// Takes an exclusive advisory lock on the path while writing.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path, ReadMode mode = ReadMode::Strict);

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
    nlohmann::json to_json() const;
    std::string summary() const;
};

ValidationReport validate_dataset(const DatasetManifest& manifest);

struct SplitResult {
    std::map<std::string, DatasetManifest> splits;
    std::vector<std::string> warnings;
};

/// Splits by asset so a screenshot never lands in two splits. Ratios must be
/// positive and sum to 1 within 1e-9. Deterministic for a given seed.
SplitResult split_dataset(const DatasetManifest& manifest,
                          const std::vector<std::pair<std::string, double>>& ratios, std::uint64_t seed);

struct DatasetStats {
    std::int64_t assets = 0;
    std::int64_t samples = 0;
    std::vector<std::pair<std::string, std::int64_t>> per_category; // descending count
    std::map<std::string, std::int64_t> per_direction;
    double mean_samples_per_asset = 0.0;

    nlohmann::json to_json() const;
    std::string to_text() const;
};

DatasetStats dataset_stats(const DatasetManifest& manifest);

// Deterministic identifiers derived from content.
std::string asset_id_for_hash(const std::string& content_hash);
std::string make_sample_id(const std::string& asset_hash, const BoundingBox& box, Direction direction,
                           const std::string& salt = {});

} // namespace groundkit
