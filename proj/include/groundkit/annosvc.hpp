#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "groundkit/store.hpp"

namespace httplib {
class Server;
}

namespace groundkit::annosvc {

struct PixelBox {
    std::int64_t x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

struct AnnotationDraft {
    std::string asset_id;
    PixelBox box;
    std::string description;
    std::string category; // empty: the asset's app category
    std::string annotator_id;
};

enum class ImageFilter { Unannotated, All, Flagged };
ImageFilter image_filter_from_string(std::string_view text);

struct AssetSummary {
    std::string id;
    std::int64_t width_px = 0;
    std::int64_t height_px = 0;
    std::string app_category;
    std::size_t sample_count = 0;
    bool flagged = false;

    nlohmann::json to_json() const;
};

struct Page {
    std::vector<AssetSummary> items;
    std::optional<std::string> next_cursor;
};

struct SubmitResult {
    GroundingSample sample;
    std::vector<std::string> warnings;
    bool created = true;
};

struct FlagAck {
    std::string asset_id;
    bool already_flagged = false;
};

struct ExportResult {
    std::filesystem::path path;
    std::size_t assets = 0;
    std::size_t samples = 0;
};

nlohmann::json sample_to_json(const GroundingSample& s);

/// Annotation state over a pool of screenshots. Every accepted change is
/// appended to `<state_dir>/events.jsonl` before it becomes visible, and the
/// log is replayed on construction. Writers for the same asset are
/// serialized; readers see an immutable snapshot.
class AnnotationStore {
public:
    using Clock = std::function<std::string()>;

    AnnotationStore(DatasetManifest pool, std::filesystem::path state_dir, Clock clock = {});

    Page list_images(ImageFilter filter, const std::string& cursor = {}, std::size_t limit = 50) const;
    AssetSummary summary(const std::string& asset_id) const;
    std::vector<GroundingSample> samples_for(const std::string& asset_id) const;
    std::filesystem::path image_path(const std::string& asset_id) const;

    SubmitResult submit(const AnnotationDraft& draft);
    FlagAck flag_privacy(const std::string& asset_id, const std::string& reason);
    // Administrative; deliberately not reachable from the annotation endpoints.
    void unflag(const std::string& asset_id);

    ExportResult export_manifest(const std::string& name) const;

    const std::filesystem::path& state_dir() const { return state_dir_; }

private:
    struct Entry {
        ScreenshotAsset asset;
        std::vector<GroundingSample> samples;
        bool flagged = false;
    };
    using State = std::map<std::string, Entry>;

    std::shared_ptr<const State> snapshot() const;
    const Entry& entry(const State& s, const std::string& id) const;
    std::mutex& asset_lock(const std::string& id);
    void record(const nlohmann::json& event);
    void apply(const nlohmann::json& event, State& state) const;
    void publish(const nlohmann::json& event);

    std::filesystem::path state_dir_;
    std::filesystem::path pool_dir_;
    Clock clock_;

    mutable std::mutex snapshot_mu_;
    std::shared_ptr<const State> state_;
    std::mutex publish_mu_;
    std::mutex log_mu_;
    std::mutex locks_mu_;
    std::map<std::string, std::unique_ptr<std::mutex>> asset_locks_;
};

struct ServerOptions {
    std::string host = "127.0.0.1";
    int port = 0;
    std::string token; // empty disables the bearer check
    int threads = 8;
};

inline constexpr const char* kTokenEnv = "GROUNDKIT_ANNOTATE_TOKEN";

/// HTTP front for an AnnotationStore.
///
///   GET  /images?filter=unannotated|all|flagged&cursor=&limit=
///   GET  /images/{id}
///   GET  /images/{id}/file
///   POST /images/{id}/annotations   {"box":[x1,y1,x2,y2],"description","category"?,"annotator_id"?}
///   POST /images/{id}/privacy-flag  {"reason"?}
///   POST /admin/images/{id}/unflag
///   GET  /export?name=
///
/// Errors are {"error": <code>, "message": <text>} with a matching status.
class AnnotationServer {
public:
    AnnotationServer(AnnotationStore& store, ServerOptions options);
    ~AnnotationServer();
    AnnotationServer(const AnnotationServer&) = delete;
    AnnotationServer& operator=(const AnnotationServer&) = delete;

    void start();
    void run();
    void stop();
    int port() const { return port_; }
    std::string base_url() const;

private:
    void bind();

    AnnotationStore& store_;
    ServerOptions options_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = 0;
};

} // namespace groundkit::annosvc
