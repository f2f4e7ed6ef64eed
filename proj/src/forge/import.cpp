#include <fstream>
#include <map>
#include <set>

#include <fmt/format.h>

#include "groundkit/forge.hpp"
#include "groundkit/image.hpp"
#include "groundkit/util.hpp"

namespace groundkit::forge {

using nlohmann::json;
namespace fs = std::filesystem;

ImportResult import_generic(const fs::path& records_path, const std::string& source_tag, const fs::path& manifest_dir) {
    std::ifstream in(records_path);
    if (!in) throw Error(ErrorCode::IoError, fmt::format("cannot open {}", records_path.string()));
    const auto records_dir = records_path.has_parent_path() ? records_path.parent_path() : fs::path(".");
    const auto out_dir = fs::absolute(manifest_dir.empty() ? fs::path(".") : manifest_dir);

    ImportResult r;
    std::map<std::string, std::size_t> asset_index; // content hash -> position in r.assets
    std::set<std::string> sample_ids;
    std::string line;
    std::size_t line_no = 0;
    auto reject = [&](const std::string& why) { r.rejections.push_back({line_no, why}); };

    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json rec;
        std::string image_field, caption, category;
        std::vector<double> box;
        try {
            rec = json::parse(line);
            image_field = rec.at("image").get<std::string>();
            caption = trim(rec.at("caption").get<std::string>());
            box = rec.at("box").get<std::vector<double>>();
            category = rec.value("category", source_tag);
        } catch (const json::exception& e) {
            reject(fmt::format("malformed record: {}", e.what()));
            continue;
        }
        if (box.size() != 4) {
            reject("box must have four values");
            continue;
        }
        if (caption.empty()) {
            reject("empty caption");
            continue;
        }
        fs::path image_path(image_field);
        if (!image_path.is_absolute()) image_path = records_dir / image_path;
        const auto dims = image::probe(image_path);
        if (!dims) {
            reject(fmt::format("missing or unreadable image {}", image_field));
            continue;
        }

        double x1 = box[0], y1 = box[1], x2 = box[2], y2 = box[3];
        const bool pixels = x1 > 1.5 || y1 > 1.5 || x2 > 1.5 || y2 > 1.5;
        if (pixels) {
            if (x1 < 0 || y1 < 0 || x2 > static_cast<double>(dims->width) || y2 > static_cast<double>(dims->height)) {
                reject(fmt::format("box ({}, {}, {}, {}) exceeds image bounds {}x{}", x1, y1, x2, y2, dims->width,
                                   dims->height));
                continue;
            }
            x1 /= static_cast<double>(dims->width);
            x2 /= static_cast<double>(dims->width);
            y1 /= static_cast<double>(dims->height);
            y2 /= static_cast<double>(dims->height);
        }
        x1 = quantize6(x1), y1 = quantize6(y1), x2 = quantize6(x2), y2 = quantize6(y2);
        if (!BoundingBox::is_valid(x1, y1, x2, y2)) {
            const bool zero = x1 == x2 || y1 == y2;
            reject(fmt::format("{} box ({}, {}, {}, {})", zero ? "zero-area" : "invalid", box[0], box[1], box[2], box[3]));
            continue;
        }
        const auto target = BoundingBox::make(x1, y1, x2, y2);

        const auto hash = sha256_file(image_path);
        auto it = asset_index.find(hash);
        if (it == asset_index.end()) {
            ScreenshotAsset a;
            a.id = asset_id_for_hash(hash);
            a.image_path = fs::absolute(image_path).lexically_normal().lexically_proximate(out_dir).generic_string();
            a.width_px = dims->width;
            a.height_px = dims->height;
            a.content_hash = hash;
            a.source = AssetSource::Import;
            a.app_category = category;
            it = asset_index.emplace(hash, r.assets.size()).first;
            r.assets.push_back(std::move(a));
        }
        const auto& asset = r.assets[it->second];

        GroundingSample s;
        s.sample_id = make_sample_id(hash, target, Direction::Forward, caption);
        if (!sample_ids.insert(s.sample_id).second) {
            reject("duplicate of an earlier record");
            continue;
        }
        s.asset_id = asset.id;
        s.instruction = caption;
        s.target = target;
        s.direction = Direction::Forward;
        s.category = category;
        r.samples.push_back(std::move(s));
    }
    return r;
}

} // namespace groundkit::forge
