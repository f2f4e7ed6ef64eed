#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "groundkit/chat_client.hpp"
#include "groundkit/core.hpp"
#include "groundkit/store.hpp"

namespace groundkit::forge {

enum class ProviderKind { Search, SimilarImage, Detector, Aligner, ValidityChecker };
std::string_view to_string(ProviderKind kind);
ProviderKind provider_kind_from_string(std::string_view text);
inline constexpr ProviderKind kAllProviderKinds[] = {ProviderKind::Search, ProviderKind::SimilarImage,
                                                     ProviderKind::Detector, ProviderKind::Aligner,
                                                     ProviderKind::ValidityChecker};

// A downloaded or local image that has not been vetted yet. `bytes` is empty
// and `fetch_error` set when retrieval failed.
struct Candidate {
    std::string locator; // path or URL
    std::vector<std::uint8_t> bytes;
    std::string content_hash;
    AssetSource source = AssetSource::Search;
    std::string app_category;
    std::string fetch_error;
};

class SearchProvider {
public:
    virtual ~SearchProvider() = default;
    virtual std::vector<std::string> search(const std::string& app, int limit) = 0;
};

class SimilarImageProvider {
public:
    virtual ~SimilarImageProvider() = default;
    virtual std::vector<std::string> similar(const Candidate& seed, int limit) = 0;
};

enum class Verdict { Yes, No, Unavailable };

class ValidityChecker {
public:
    virtual ~ValidityChecker() = default;
    virtual Verdict check(const cv::Mat& image, std::span<const std::uint8_t> encoded) = 0;
};

class Detector {
public:
    virtual ~Detector() = default;
    virtual std::vector<BoundingBox> detect(const cv::Mat& image) = 0;
};

class Aligner {
public:
    virtual ~Aligner() = default;
    // Raw description text; empty or a refusal drops the region.
    // Throws EndpointError(endpoint-unavailable) when the aligner is down.
    virtual std::string describe(const cv::Mat& image, const BoundingBox& box) = 0;
};

struct FilterPolicy {
    std::int64_t min_width_px = 800;
    std::int64_t min_height_px = 600;
    bool require_validity_check = true;
    std::string validity_prompt =
        "Is this image a valid screenshot of a desktop software application? Answer yes or no.";
    bool strict = false; // checker outage rejects instead of accepting with a warning

    void validate() const;
};

struct Providers {
    std::unique_ptr<SearchProvider> search;
    std::unique_ptr<SimilarImageProvider> similar;
    std::unique_ptr<Detector> detector;
    std::unique_ptr<Aligner> aligner;
    std::unique_ptr<ValidityChecker> checker;
    std::map<ProviderKind, int> concurrency;

    int limit(ProviderKind kind) const;
};

// "builtin:<name>[:arg]" string or {"endpoint": {...}, "prompt": "...", "max_concurrency": n}.
// Every kind must be bound. Fails with ConfigError before touching the network.
Providers resolve_providers(const nlohmann::json& bindings, const std::filesystem::path& base_dir);

std::unique_ptr<Detector> make_heuristic_detector();

struct AcquireResult {
    std::vector<Candidate> candidates;
    std::vector<std::string> warnings;
};

// Searches every app, then expands search hits through the similar-image
// provider. Stops after `budget` candidates.
AcquireResult acquire(const std::vector<std::string>& apps, SearchProvider& search, SimilarImageProvider& similar,
                      int budget);

struct FilterOutcome {
    bool accepted = false;
    std::string reason; // low-resolution, corrupt, not-a-screenshot, checker-unavailable, fetch-failed
    std::string warning;
    Dimensions dims;
};

FilterOutcome filter_screenshot(const Candidate& candidate, const FilterPolicy& policy, ValidityChecker& checker);

// Edge-density region proposal: Sobel magnitude, fixed threshold, 8-connected
// components, size band of at least 12x12 px and at most a quarter of the frame.
std::vector<BoundingBox> heuristic_detector(const cv::Mat& image);

// Reading order (top-left first) with near-duplicates (IoU > 0.9) merged.
std::vector<BoundingBox> merge_and_order(std::vector<BoundingBox> boxes);

struct DetectResult {
    std::vector<BoundingBox> boxes;
    std::string warning;
};
DetectResult detect_regions(const cv::Mat& image, Detector& detector);

inline constexpr std::size_t kMaxDescriptionChars = 200;

// Trimmed, whitespace-collapsed, capped at a word boundary. nullopt for empty
// replies and refusals.
std::optional<std::string> clean_description(std::string_view raw);

struct AlignResult {
    std::vector<Element> elements;
    std::int64_t dropped = 0;
};
AlignResult align_descriptions(const cv::Mat& image, const std::vector<BoundingBox>& boxes, Aligner& aligner);

// Screenshot with the box outlined, and a padded crop of the box.
cv::Mat overlay_box(const cv::Mat& image, const BoundingBox& box);
cv::Mat crop_box(const cv::Mat& image, const BoundingBox& box, int pad_px = 8);

// Indices of survivors; later items within `hamming_threshold` of an earlier
// survivor collapse into it.
std::vector<std::size_t> dedup_hashes(const std::vector<std::uint64_t>& hashes, int hamming_threshold);
std::vector<ScreenshotAsset> dedup_assets(const std::vector<ScreenshotAsset>& assets,
                                          const std::filesystem::path& base_dir, int hamming_threshold);

// One forward and one reverse sample per element.
std::vector<GroundingSample> synthesize_samples(const ScreenshotAsset& asset, const std::vector<Element>& elements);

struct RunCounters {
    std::int64_t fetched = 0;
    std::int64_t accepted = 0;
    std::map<std::string, std::int64_t> rejected;
    std::int64_t deduped = 0;
    std::int64_t regions = 0;
    std::int64_t aligned = 0;
    std::int64_t dropped = 0;
    std::int64_t samples = 0;

    std::int64_t rejected_total() const;
    nlohmann::json to_json() const;
};

struct RunConfig {
    std::string run_id;
    std::uint64_t seed = 0;
    int budget = 100;
    std::vector<std::string> apps;
    std::filesystem::path output_dir;
    FilterPolicy policy;
    double admission_probability = 1.0;
    int dedup_hamming = 4;
    std::string dataset_name = "forge";
    nlohmann::json providers;
    std::filesystem::path base_dir; // where relative paths in the config resolve

    void validate() const;
    static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
    static RunConfig load(const std::filesystem::path& path);
};

struct PipelineResult {
    DatasetManifest manifest;
    RunCounters counters;
    std::vector<std::string> warnings;
    std::filesystem::path manifest_path;
    std::filesystem::path journal_path;
    std::filesystem::path summary_path;
};

// Seeded Bernoulli admission keyed on content so it does not depend on order.
bool admitted(std::uint64_t seed, const std::string& content_hash, double probability);

/// acquire -> filter -> detect -> align -> dedup -> synthesize. Writes
/// images/, manifest.jsonl, journal.jsonl and run_summary.json under the
/// output directory. Stage outcomes already in the journal are reused.
PipelineResult run_pipeline(const RunConfig& config, Providers& providers);

struct ImportRejection {
    std::size_t line = 0;
    std::string reason;
};

struct ImportResult {
    std::vector<ScreenshotAsset> assets;
    std::vector<GroundingSample> samples;
    std::vector<ImportRejection> rejections;
};

// JSONL records {"image", "box", "caption", "category"?}. Image paths resolve
// against the records file; asset paths come out relative to `manifest_dir`.
ImportResult import_generic(const std::filesystem::path& records_path, const std::string& source_tag,
                            const std::filesystem::path& manifest_dir);

} // namespace groundkit::forge
