#include <algorithm>

#include <opencv2/imgproc.hpp>

#include "groundkit/forge.hpp"
#include "groundkit/image.hpp"

namespace groundkit::forge {

namespace {

constexpr int kMinSidePx = 12;
constexpr double kMaxFrameFraction = 0.25;
constexpr float kEdgeThreshold = 48.0f;

class HeuristicDetector final : public Detector {
public:
    std::vector<BoundingBox> detect(const cv::Mat& image) override { return heuristic_detector(image); }
};

} // namespace

std::unique_ptr<Detector> make_heuristic_detector() {
    return std::make_unique<HeuristicDetector>();
}

std::vector<BoundingBox> heuristic_detector(const cv::Mat& image) {
    if (image.empty()) return {};
    cv::Mat gray;
    if (image.channels() == 1) {
        gray = image;
    } else if (image.channels() == 4) {
        cv::cvtColor(image, gray, cv::COLOR_BGRA2GRAY);
    } else {
        cv::cvtColor(image, gray, cv::COLOR_BGR2GRAY);
    }
    cv::Mat gx, gy, mag;
    cv::Sobel(gray, gx, CV_32F, 1, 0, 3);
    cv::Sobel(gray, gy, CV_32F, 0, 1, 3);
    cv::magnitude(gx, gy, mag);
    cv::Mat edges = mag > kEdgeThreshold;

    cv::Mat labels, stats, centroids;
    const int n = cv::connectedComponentsWithStats(edges, labels, stats, centroids, 8, CV_32S);
    const double frame = static_cast<double>(image.cols) * image.rows;
    const double w = image.cols, h = image.rows;

    std::vector<BoundingBox> out;
    for (int i = 1; i < n; ++i) {
        const int left = stats.at<int>(i, cv::CC_STAT_LEFT);
        const int top = stats.at<int>(i, cv::CC_STAT_TOP);
        const int cw = stats.at<int>(i, cv::CC_STAT_WIDTH);
        const int ch = stats.at<int>(i, cv::CC_STAT_HEIGHT);
        if (cw < kMinSidePx || ch < kMinSidePx) continue;
        if (static_cast<double>(cw) * ch > kMaxFrameFraction * frame) continue;
        const double x1 = quantize6(left / w), y1 = quantize6(top / h);
        const double x2 = quantize6((left + cw) / w), y2 = quantize6((top + ch) / h);
        if (!BoundingBox::is_valid(x1, y1, x2, y2)) continue;
        out.push_back(BoundingBox::make(x1, y1, x2, y2));
    }
    return merge_and_order(std::move(out));
}

std::vector<BoundingBox> merge_and_order(std::vector<BoundingBox> boxes) {
    std::sort(boxes.begin(), boxes.end(), [](const BoundingBox& a, const BoundingBox& b) {
        if (a.y1() != b.y1()) return a.y1() < b.y1();
        if (a.x1() != b.x1()) return a.x1() < b.x1();
        if (a.y2() != b.y2()) return a.y2() < b.y2();
        return a.x2() < b.x2();
    });
    std::vector<BoundingBox> kept;
    for (const auto& b : boxes) {
        const bool dup = std::any_of(kept.begin(), kept.end(), [&](const BoundingBox& k) { return iou(k, b) > 0.9; });
        if (!dup) kept.push_back(b);
    }
    return kept;
}

DetectResult detect_regions(const cv::Mat& image, Detector& detector) {
    DetectResult r;
    try {
        std::vector<BoundingBox> valid;
        for (const auto& b : detector.detect(image)) {
            if (BoundingBox::is_valid(b.x1(), b.y1(), b.x2(), b.y2())) valid.push_back(quantize_box(b));
        }
        r.boxes = merge_and_order(std::move(valid));
    } catch (const std::exception& e) {
        r.boxes.clear();
        r.warning = std::string("detector failed: ") + e.what();
    }
    return r;
}

cv::Mat overlay_box(const cv::Mat& image, const BoundingBox& box) {
    cv::Mat out = image.clone();
    const auto rect = image::to_pixel_rect(box, {image.cols, image.rows});
    const int thickness = std::max(2, std::min(image.cols, image.rows) / 300);
    cv::rectangle(out, rect, cv::Scalar(0, 0, 255), thickness);
    return out;
}

cv::Mat crop_box(const cv::Mat& image, const BoundingBox& box, int pad_px) {
    auto rect = image::to_pixel_rect(box, {image.cols, image.rows});
    rect.x -= pad_px;
    rect.y -= pad_px;
    rect.width += 2 * pad_px;
    rect.height += 2 * pad_px;
    rect &= cv::Rect(0, 0, image.cols, image.rows);
    if (rect.width < 1 || rect.height < 1) return image.clone();
    return image(rect).clone();
}

std::vector<std::size_t> dedup_hashes(const std::vector<std::uint64_t>& hashes, int hamming_threshold) {
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < hashes.size(); ++i) {
        const bool dup = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
            return image::hamming_distance(hashes[k], hashes[i]) <= hamming_threshold;
        });
        if (!dup) kept.push_back(i);
    }
    return kept;
}

std::vector<ScreenshotAsset> dedup_assets(const std::vector<ScreenshotAsset>& assets,
                                          const std::filesystem::path& base_dir, int hamming_threshold) {
    std::vector<std::uint64_t> hashes;
    hashes.reserve(assets.size());
    for (const auto& a : assets) {
        std::filesystem::path p(a.image_path);
        if (!p.is_absolute() && !base_dir.empty()) p = base_dir / p;
        hashes.push_back(image::difference_hash(image::load_color(p)));
    }
    std::vector<ScreenshotAsset> out;
    for (auto i : dedup_hashes(hashes, hamming_threshold)) out.push_back(assets[i]);
    return out;
}

} // namespace groundkit::forge
