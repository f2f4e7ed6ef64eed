#include "groundkit/store.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "groundkit/util.hpp"

namespace groundkit {

using nlohmann::json;

const ScreenshotAsset* DatasetManifest::find_asset(const std::string& id) const {
    auto it = std::find_if(assets.begin(), assets.end(), [&](const ScreenshotAsset& a) { return a.id == id; });
    return it == assets.end() ? nullptr : &*it;
}

std::filesystem::path DatasetManifest::resolve(const ScreenshotAsset& asset) const {
    std::filesystem::path p(asset.image_path);
    if (p.is_absolute() || base_dir.empty()) return p;
    return base_dir / p;
}

bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    if (a.format_version != b.format_version || a.name != b.name || !(a.provenance == b.provenance)) return false;
    auto sorted_assets = [](std::vector<ScreenshotAsset> v) {
        std::sort(v.begin(), v.end(), [](const auto& x, const auto& y) { return x.id < y.id; });
        return v;
    };
    auto sorted_samples = [](std::vector<GroundingSample> v) {
        std::sort(v.begin(), v.end(), [](const auto& x, const auto& y) { return x.sample_id < y.sample_id; });
        return v;
    };
    return sorted_assets(a.assets) == sorted_assets(b.assets) && sorted_samples(a.samples) == sorted_samples(b.samples);
}

std::string asset_id_for_hash(const std::string& content_hash) {
    return "a-" + content_hash.substr(0, 16);
}

std::string make_sample_id(const std::string& asset_hash, const BoundingBox& box, Direction direction,
                           const std::string& salt) {
    const auto key = fmt::format("{}|{},{},{},{}|{}|{}", asset_hash, format6(box.x1()), format6(box.y1()),
                                 format6(box.x2()), format6(box.y2()), to_string(direction), salt);
    return "s-" + sha256_hex(key).substr(0, 16);
}

namespace {

std::string q(const std::string& s) {
    return json(s).dump();
}

std::string asset_line(const ScreenshotAsset& a) {
    return fmt::format(R"({{"kind":"asset","id":{},"image_path":{},"width_px":{},"height_px":{},)"
                       R"("content_hash":{},"source":{},"app_category":{},"privacy_flag":{}}})",
                       q(a.id), q(a.image_path), a.width_px, a.height_px, q(a.content_hash),
                       q(std::string(to_string(a.source))), q(a.app_category), a.privacy_flag ? "true" : "false");
}

std::string sample_line(const GroundingSample& s) {
    return fmt::format(R"({{"kind":"sample","sample_id":{},"asset_id":{},"direction":{},"instruction":{},)"
                       R"("target":[{},{},{},{}],"category":{}}})",
                       q(s.sample_id), q(s.asset_id), q(std::string(to_string(s.direction))), q(s.instruction),
                       format6(s.target.x1()), format6(s.target.y1()), format6(s.target.x2()),
                       format6(s.target.y2()), q(s.category));
}

[[noreturn]] void fail_line(std::size_t line, const std::string& what) {
    throw Error(ErrorCode::ParseError, fmt::format("manifest line {}: {}", line, what));
}

} // namespace

std::string serialize_manifest(const DatasetManifest& manifest) {
    std::vector<const ScreenshotAsset*> assets;
    std::set<std::string> flagged;
    for (const auto& a : manifest.assets) {
        if (a.privacy_flag) {
            flagged.insert(a.id);
        } else {
            assets.push_back(&a);
        }
    }
    std::sort(assets.begin(), assets.end(), [](auto* x, auto* y) { return x->id < y->id; });

    std::vector<const GroundingSample*> samples;
    for (const auto& s : manifest.samples) {
        if (flagged.count(s.asset_id)) continue;
        samples.push_back(&s);
    }
    std::sort(samples.begin(), samples.end(), [](auto* x, auto* y) { return x->sample_id < y->sample_id; });

    std::string out = fmt::format(
        R"({{"kind":"header","format_version":{},"name":{},"assets":{},"samples":{},)"
        R"("provenance":{{"run_id":{},"seed":{},"tool_version":{}}}}})",
        manifest.format_version, q(manifest.name), assets.size(), samples.size(), q(manifest.provenance.run_id),
        manifest.provenance.seed, q(manifest.provenance.tool_version));
    out += '\n';
    for (const auto* a : assets) {
        out += asset_line(*a);
        out += '\n';
    }
    for (const auto* s : samples) {
        out += sample_line(*s);
        out += '\n';
    }
    return out;
}

DatasetManifest parse_manifest(std::string_view text, ReadMode mode) {
    DatasetManifest m;
    std::size_t line_no = 0;
    std::size_t expected_assets = 0;
    std::size_t expected_samples = 0;
    std::size_t seen_assets = 0;
    std::size_t seen_samples = 0;
    bool have_header = false;

    auto issue = [&](std::size_t line, const std::string& kind, const std::string& id, const std::string& code,
                     const std::string& msg) {
        if (mode == ReadMode::Strict) fail_line(line, msg);
        m.load_issues.push_back({code, kind, id.empty() ? fmt::format("line {}", line) : id,
                                 fmt::format("line {}: {}", line, msg)});
    };

    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        const bool terminated = nl != std::string_view::npos;
        auto line = text.substr(pos, terminated ? nl - pos : std::string_view::npos);
        pos = terminated ? nl + 1 : text.size();
        ++line_no;
        if (line.empty()) {
            if (terminated) continue;
            break;
        }
        if (!terminated) fail_line(line_no, "truncated record (missing newline)");

        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            fail_line(line_no, fmt::format("malformed record: {}", e.what()));
        }
        if (!rec.is_object() || !rec.contains("kind")) fail_line(line_no, "record has no kind");

        try {
            const auto kind = rec.at("kind").get<std::string>();
            if (kind == "header") {
                if (have_header || line_no != 1) fail_line(line_no, "header must be the first and only header line");
                have_header = true;
                m.format_version = rec.at("format_version").get<int>();
                if (m.format_version != kManifestFormatVersion) {
                    throw Error(ErrorCode::UnsupportedVersion,
                                fmt::format("manifest format_version {} is not supported (expected {})",
                                            m.format_version, kManifestFormatVersion));
                }
                m.name = rec.at("name").get<std::string>();
                expected_assets = rec.at("assets").get<std::size_t>();
                expected_samples = rec.at("samples").get<std::size_t>();
                const auto& p = rec.at("provenance");
                m.provenance.run_id = p.at("run_id").get<std::string>();
                m.provenance.seed = p.at("seed").get<std::uint64_t>();
                m.provenance.tool_version = p.at("tool_version").get<std::string>();
                continue;
            }
            if (!have_header) fail_line(line_no, "missing header line");
            if (kind == "asset") {
                ++seen_assets;
                if (seen_samples > 0) fail_line(line_no, "asset record after sample records");
                ScreenshotAsset a;
                a.id = rec.at("id").get<std::string>();
                a.image_path = rec.at("image_path").get<std::string>();
                a.width_px = rec.at("width_px").get<std::int64_t>();
                a.height_px = rec.at("height_px").get<std::int64_t>();
                a.content_hash = rec.at("content_hash").get<std::string>();
                a.source = asset_source_from_string(rec.at("source").get<std::string>());
                a.app_category = rec.at("app_category").get<std::string>();
                a.privacy_flag = rec.at("privacy_flag").get<bool>();
                if (a.width_px < 1 || a.height_px < 1) {
                    issue(line_no, "asset", a.id, "invalid-dimensions",
                          fmt::format("asset '{}' has invalid dimensions {}x{}", a.id, a.width_px, a.height_px));
                    continue;
                }
                m.assets.push_back(std::move(a));
            } else if (kind == "sample") {
                ++seen_samples;
                GroundingSample s;
                s.sample_id = rec.at("sample_id").get<std::string>();
                s.asset_id = rec.at("asset_id").get<std::string>();
                s.direction = direction_from_string(rec.at("direction").get<std::string>());
                s.instruction = rec.at("instruction").get<std::string>();
                s.category = rec.at("category").get<std::string>();
                const auto t = rec.at("target").get<std::vector<double>>();
                if (t.size() != 4) fail_line(line_no, "target must have four coordinates");
                if (!BoundingBox::is_valid(t[0], t[1], t[2], t[3])) {
                    issue(line_no, "sample", s.sample_id, "invalid-target",
                          fmt::format("sample '{}' target ({}, {}, {}, {}) violates 0 <= x1 < x2 <= 1, "
                                      "0 <= y1 < y2 <= 1",
                                      s.sample_id, t[0], t[1], t[2], t[3]));
                    continue;
                }
                s.target = BoundingBox::make(t[0], t[1], t[2], t[3]);
                m.samples.push_back(std::move(s));
            } else {
                fail_line(line_no, fmt::format("unknown record kind '{}'", kind));
            }
        } catch (const json::exception& e) {
            fail_line(line_no, fmt::format("bad field: {}", e.what()));
        } catch (const Error& e) {
            if (e.code() == ErrorCode::InvalidArgument) fail_line(line_no, e.what());
            throw;
        }
    }
    if (!have_header) fail_line(std::max<std::size_t>(line_no, 1), "missing header line");
    if (seen_assets != expected_assets || seen_samples != expected_samples) {
        fail_line(line_no, fmt::format("header declares {} assets and {} samples but file holds {} and {}",
                                       expected_assets, expected_samples, seen_assets, seen_samples));
    }
    return m;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    const auto text = serialize_manifest(manifest);
    FileLock lock(path);
    write_file_atomic(path, text);
}

DatasetManifest read_manifest(const std::filesystem::path& path, ReadMode mode) {
    auto m = parse_manifest(read_text_file(path), mode);
    m.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    return m;
}

} // namespace groundkit
