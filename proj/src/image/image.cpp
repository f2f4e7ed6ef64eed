#include "groundkit/image.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace groundkit::image {

std::optional<Dimensions> probe(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) return std::nullopt;
    const cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (img.empty()) return std::nullopt;
    return Dimensions{img.cols, img.rows};
}

cv::Mat load_color(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        throw Error(ErrorCode::AssetError, fmt::format("image '{}' not found", path.string()));
    }
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (img.empty()) throw Error(ErrorCode::AssetError, fmt::format("image '{}' cannot be decoded", path.string()));
    return img;
}

std::vector<std::uint8_t> encode_png(const cv::Mat& img) {
    std::vector<std::uint8_t> buf;
    if (!cv::imencode(".png", img, buf)) throw Error(ErrorCode::AssetError, "png encoding failed");
    return buf;
}

std::uint64_t difference_hash(const cv::Mat& img) {
    cv::Mat gray;
    if (img.channels() == 1) {
        gray = img;
    } else {
        cv::cvtColor(img, gray, img.channels() == 4 ? cv::COLOR_BGRA2GRAY : cv::COLOR_BGR2GRAY);
    }
    cv::Mat small;
    cv::resize(gray, small, cv::Size(9, 8), 0, 0, cv::INTER_AREA);
    std::uint64_t hash = 0;
    for (int r = 0; r < 8; ++r) {
        for (int c = 0; c < 8; ++c) {
            hash <<= 1;
            if (small.at<std::uint8_t>(r, c) > small.at<std::uint8_t>(r, c + 1)) hash |= 1;
        }
    }
    return hash;
}

int hamming_distance(std::uint64_t a, std::uint64_t b) {
    return std::popcount(a ^ b);
}

cv::Rect to_pixel_rect(const BoundingBox& box, Dimensions dims) {
    const auto w = static_cast<double>(dims.width);
    const auto h = static_cast<double>(dims.height);
    const int x1 = static_cast<int>(std::floor(box.x1() * w));
    const int y1 = static_cast<int>(std::floor(box.y1() * h));
    const int x2 = std::max(x1 + 1, static_cast<int>(std::ceil(box.x2() * w)));
    const int y2 = std::max(y1 + 1, static_cast<int>(std::ceil(box.y2() * h)));
    cv::Rect r(x1, y1, x2 - x1, y2 - y1);
    return r & cv::Rect(0, 0, static_cast<int>(dims.width), static_cast<int>(dims.height));
}

} // namespace groundkit::image
