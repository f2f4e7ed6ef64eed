#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "groundkit/chat_client.hpp"
#include "groundkit/coordparse.hpp"
#include "groundkit/core.hpp"
#include "groundkit/store.hpp"

namespace groundkit {

struct PromptTemplate {
    std::string template_id;
    Direction direction = Direction::Forward;
    std::string body;
};

inline constexpr const char* kDefaultForwardTemplate = "default-forward";
inline constexpr const char* kDefaultReverseTemplate = "default-reverse";

class TemplateRegistry {
public:
    // default-forward, where-click, default-reverse
    static const TemplateRegistry& builtin();
    static TemplateRegistry with_builtins();

    // Throws TemplateError when the body lacks the placeholders its direction needs.
    void add(PromptTemplate t);
    const PromptTemplate& get(const std::string& id) const;
    std::vector<std::string> ids() const;

private:
    std::map<std::string, PromptTemplate> templates_;
};

// {instruction} for forward; {x} and {y} (target center, six decimals) for reverse.
std::string render_prompt(const PromptTemplate& t, const GroundingSample& sample);

struct Prediction {
    std::string sample_id;
    std::string raw_text;
    ParsedTarget parsed;
    double latency_ms = 0.0;
    int attempt_count = 0;
    std::string model_name;
    std::string error; // empty on success, else an ErrorCode name
    std::string error_note;

    bool failed() const { return !error.empty(); }
};

nlohmann::json prediction_to_json(const Prediction& p, bool include_latency);
Prediction prediction_from_json(const nlohmann::json& j);

// Sorted by sample_id, without timing, one JSON object per line.
std::string render_predictions(std::vector<Prediction> predictions);
std::vector<Prediction> parse_predictions(std::string_view text);

struct QueryResult {
    std::string text;
    int attempts = 0;
    double latency_ms = 0.0;
    Dimensions sent_dims; // differs from the asset only when resizing is enabled
};

// Throws AssetError, EndpointError (endpoint-unavailable / request-rejected / config).
QueryResult query_model(const ChatClient& client, const std::string& prompt, const ScreenshotAsset& asset,
                        const std::filesystem::path& image_path, const std::string& request_id = {});

struct RunOptions {
    std::filesystem::path journal_path; // empty disables journaling and resume
    // Checked before each new request; returning true stops dispatching.
    std::function<bool()> should_stop;
    std::function<void(const Prediction&)> on_prediction;
};

struct RunSummary {
    std::vector<Prediction> predictions; // sorted by sample_id
    std::int64_t eligible = 0;
    std::int64_t resumed = 0;
    std::int64_t new_requests = 0;
    std::int64_t endpoint_failures = 0; // endpoint-unavailable; not journaled, retried on rerun
    bool interrupted = false;

    bool complete() const {
        return !interrupted && endpoint_failures == 0 && static_cast<std::int64_t>(predictions.size()) == eligible;
    }
};

/// Queries every sample whose direction matches the template. Workers are
/// bounded by max_parallel_requests; finished predictions go through a queue
/// to a single journal writer. Samples already present in the journal are
/// not re-queried.
RunSummary run_benchmark(const DatasetManifest& dataset, const ChatClient& client, const PromptTemplate& tmpl,
                         const RunOptions& options = {});

} // namespace groundkit
