#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "groundkit/annosvc.hpp"
#include "groundkit/util.hpp"

namespace groundkit::annosvc {

using nlohmann::json;
namespace fs = std::filesystem;

ImageFilter image_filter_from_string(std::string_view text) {
    if (text.empty() || text == "unannotated") return ImageFilter::Unannotated;
    if (text == "all") return ImageFilter::All;
    if (text == "flagged") return ImageFilter::Flagged;
    throw Error(ErrorCode::InvalidArgument, fmt::format("unknown filter '{}' (unannotated, all, flagged)", text));
}

json AssetSummary::to_json() const {
    return {{"id", id},
            {"width_px", width_px},
            {"height_px", height_px},
            {"app_category", app_category},
            {"sample_count", sample_count},
            {"flagged", flagged}};
}

json sample_to_json(const GroundingSample& s) {
    return {{"sample_id", s.sample_id},
            {"asset_id", s.asset_id},
            {"instruction", s.instruction},
            {"direction", to_string(s.direction)},
            {"category", s.category},
            {"target", json::array({s.target.x1(), s.target.y1(), s.target.x2(), s.target.y2()})}};
}

namespace {

std::string utc_now() {
    return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(std::chrono::system_clock::now())));
}

GroundingSample sample_from_json(const json& j) {
    GroundingSample s;
    s.sample_id = j.at("sample_id").get<std::string>();
    s.asset_id = j.at("asset_id").get<std::string>();
    s.instruction = j.at("instruction").get<std::string>();
    s.direction = direction_from_string(j.at("direction").get<std::string>());
    s.category = j.at("category").get<std::string>();
    const auto t = j.at("target").get<std::vector<double>>();
    s.target = BoundingBox::make(t.at(0), t.at(1), t.at(2), t.at(3));
    return s;
}

// Mostly non-ASCII text is a hint the description is not English.
bool looks_non_english(const std::string& text) {
    std::size_t letters = 0, foreign = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (c >= 0xC0) {
            ++foreign;
            ++letters;
        } else if (c < 0x80 && std::isalpha(c)) {
            ++letters;
        }
    }
    return letters > 0 && foreign * 5 > letters;
}

bool valid_export_name(const std::string& name) {
    if (name.empty() || name.size() > 100 || name.front() == '.') return false;
    return std::all_of(name.begin(), name.end(),
                       [](unsigned char c) { return std::isalnum(c) || c == '-' || c == '_' || c == '.'; });
}

} // namespace

AnnotationStore::AnnotationStore(DatasetManifest pool, fs::path state_dir, Clock clock)
    : state_dir_(std::move(state_dir)), pool_dir_(fs::absolute(pool.base_dir.empty() ? fs::path(".") : pool.base_dir)),
      clock_(clock ? std::move(clock) : Clock(utc_now)) {
    fs::create_directories(state_dir_);
    auto state = std::make_shared<State>();
    for (auto& a : pool.assets) {
        auto id = a.id;
        Entry e;
        e.flagged = a.privacy_flag;
        e.asset = std::move(a);
        e.asset.privacy_flag = false;
        if (!state->emplace(id, std::move(e)).second) {
            throw Error(ErrorCode::DuplicateSample, fmt::format("duplicate asset id '{}' in pool", id));
        }
    }
    for (auto& s : pool.samples) {
        auto it = state->find(s.asset_id);
        if (it != state->end()) it->second.samples.push_back(std::move(s));
    }

    std::ifstream in(state_dir_ / "events.jsonl");
    std::string line;
    while (std::getline(in, line)) {
        json ev;
        try {
            ev = json::parse(line);
        } catch (const json::exception&) {
            continue; // torn tail from a crash mid-append
        }
        apply(ev, *state);
    }
    state_ = std::move(state);
}

std::shared_ptr<const AnnotationStore::State> AnnotationStore::snapshot() const {
    std::lock_guard lock(snapshot_mu_);
    return state_;
}

const AnnotationStore::Entry& AnnotationStore::entry(const State& s, const std::string& id) const {
    auto it = s.find(id);
    if (it == s.end()) throw Error(ErrorCode::NotFound, fmt::format("unknown asset '{}'", id));
    return it->second;
}

std::mutex& AnnotationStore::asset_lock(const std::string& id) {
    std::lock_guard lock(locks_mu_);
    auto& slot = asset_locks_[id];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
}

void AnnotationStore::record(const json& event) {
    std::lock_guard lock(log_mu_);
    std::ofstream out(state_dir_ / "events.jsonl", std::ios::app | std::ios::binary);
    out << event.dump() << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::IoError, "cannot append to annotation event log");
}

void AnnotationStore::apply(const json& ev, State& state) const {
    const auto type = ev.at("type").get<std::string>();
    auto it = state.find(ev.at("asset_id").get<std::string>());
    if (it == state.end()) return;
    auto& e = it->second;
    if (type == "annotation") {
        auto s = sample_from_json(ev.at("sample"));
        const bool dup = std::any_of(e.samples.begin(), e.samples.end(),
                                     [&](const GroundingSample& x) { return x.sample_id == s.sample_id; });
        if (!dup) e.samples.push_back(std::move(s));
    } else if (type == "flag") {
        e.flagged = true;
    } else if (type == "unflag") {
        e.flagged = false;
    }
}

void AnnotationStore::publish(const json& event) {
    record(event);
    std::lock_guard lock(publish_mu_);
    auto next = std::make_shared<State>(*snapshot());
    apply(event, *next);
    std::lock_guard swap(snapshot_mu_);
    state_ = std::move(next);
}

Page AnnotationStore::list_images(ImageFilter filter, const std::string& cursor, std::size_t limit) const {
    limit = std::clamp<std::size_t>(limit, 1, 500);
    const auto s = snapshot();
    Page page;
    for (auto it = cursor.empty() ? s->begin() : s->upper_bound(cursor); it != s->end(); ++it) {
        const auto& e = it->second;
        const bool keep = filter == ImageFilter::Flagged ? e.flagged
                          : filter == ImageFilter::All   ? !e.flagged
                                                         : !e.flagged && e.samples.empty();
        if (!keep) continue;
        if (page.items.size() == limit) {
            page.next_cursor = page.items.back().id;
            break;
        }
        page.items.push_back({e.asset.id, e.asset.width_px, e.asset.height_px, e.asset.app_category, e.samples.size(),
                              e.flagged});
    }
    return page;
}

AssetSummary AnnotationStore::summary(const std::string& asset_id) const {
    const auto s = snapshot();
    const auto& e = entry(*s, asset_id);
    return {e.asset.id, e.asset.width_px, e.asset.height_px, e.asset.app_category, e.samples.size(), e.flagged};
}

std::vector<GroundingSample> AnnotationStore::samples_for(const std::string& asset_id) const {
    const auto s = snapshot();
    return entry(*s, asset_id).samples;
}

fs::path AnnotationStore::image_path(const std::string& asset_id) const {
    const auto s = snapshot();
    fs::path p(entry(*s, asset_id).asset.image_path);
    return p.is_absolute() ? p : pool_dir_ / p;
}

SubmitResult AnnotationStore::submit(const AnnotationDraft& draft) {
    std::lock_guard asset_guard(asset_lock(draft.asset_id));
    const auto s = snapshot();
    const auto& e = entry(*s, draft.asset_id);
    if (e.flagged) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("asset '{}' is privacy-flagged", draft.asset_id));
    }
    const auto description = trim(draft.description);
    if (description.empty()) throw Error(ErrorCode::InvalidArgument, "description must not be empty");

    const auto w = e.asset.width_px, h = e.asset.height_px;
    const auto& b = draft.box;
    if (b.x1 < 0 || b.y1 < 0 || b.x2 > w || b.y2 > h || b.x1 >= b.x2 || b.y1 >= b.y2) {
        throw Error(ErrorCode::InvalidGeometry,
                    fmt::format("box ({}, {}, {}, {}) must satisfy 0 <= x1 < x2 <= {} and 0 <= y1 < y2 <= {}", b.x1,
                                b.y1, b.x2, b.y2, w, h));
    }
    const auto dw = static_cast<double>(w), dh = static_cast<double>(h);
    const auto target = BoundingBox::make(quantize6(static_cast<double>(b.x1) / dw), quantize6(static_cast<double>(b.y1) / dh),
                                          quantize6(static_cast<double>(b.x2) / dw), quantize6(static_cast<double>(b.y2) / dh));

    SubmitResult result;
    result.sample.sample_id = make_sample_id(e.asset.content_hash, target, Direction::Forward, description);
    result.sample.asset_id = e.asset.id;
    result.sample.instruction = description;
    result.sample.target = target;
    result.sample.direction = Direction::Forward;
    result.sample.category = draft.category.empty() ? e.asset.app_category : trim(draft.category);
    if (looks_non_english(description)) result.warnings.push_back("description does not look like English");

    for (const auto& existing : e.samples) {
        if (existing.sample_id == result.sample.sample_id) {
            result.sample = existing;
            result.created = false;
            result.warnings.push_back("identical annotation already stored");
            return result;
        }
    }
    publish({{"type", "annotation"},
             {"asset_id", e.asset.id},
             {"annotator_id", draft.annotator_id},
             {"created_at", clock_()},
             {"pixel_box", json::array({b.x1, b.y1, b.x2, b.y2})},
             {"sample", sample_to_json(result.sample)}});
    return result;
}

FlagAck AnnotationStore::flag_privacy(const std::string& asset_id, const std::string& reason) {
    std::lock_guard asset_guard(asset_lock(asset_id));
    const auto s = snapshot();
    const auto& e = entry(*s, asset_id);
    if (e.flagged) return {asset_id, true};
    publish({{"type", "flag"}, {"asset_id", asset_id}, {"reason", reason}, {"created_at", clock_()}});
    return {asset_id, false};
}

void AnnotationStore::unflag(const std::string& asset_id) {
    std::lock_guard asset_guard(asset_lock(asset_id));
    const auto s = snapshot();
    if (!entry(*s, asset_id).flagged) return;
    publish({{"type", "unflag"}, {"asset_id", asset_id}, {"created_at", clock_()}});
}

ExportResult AnnotationStore::export_manifest(const std::string& name) const {
    if (!valid_export_name(name)) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("export name '{}' must match [A-Za-z0-9._-]+", name));
    }
    const auto s = snapshot();
    const auto dir = fs::absolute(state_dir_ / "exports");
    DatasetManifest m;
    m.name = name;
    m.provenance = {"annotation-export", 0, kToolVersion};
    for (const auto& [id, e] : *s) {
        if (e.flagged || e.samples.empty()) continue;
        auto a = e.asset;
        fs::path p(a.image_path);
        if (!p.is_absolute()) p = pool_dir_ / p;
        a.image_path = p.lexically_normal().lexically_proximate(dir).generic_string();
        m.assets.push_back(std::move(a));
        m.samples.insert(m.samples.end(), e.samples.begin(), e.samples.end());
    }
    if (m.assets.empty()) throw Error(ErrorCode::EmptyExport, "nothing to export: no unflagged annotated assets");

    fs::create_directories(dir);
    const auto path = dir / (name + ".jsonl");
    write_manifest(m, path);
    const auto report = validate_dataset(read_manifest(path));
    if (!report.ok()) throw Error(ErrorCode::ParseError, "exported manifest failed validation: " + report.summary());
    return {path, m.assets.size(), m.samples.size()};
}

} // namespace groundkit::annosvc
