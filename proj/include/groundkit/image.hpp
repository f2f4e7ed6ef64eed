#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "groundkit/core.hpp"

namespace groundkit::image {

// Decoded dimensions, or nullopt when the file is missing or undecodable.
std::optional<Dimensions> probe(const std::filesystem::path& path);

// Throws AssetError when the file cannot be decoded.
cv::Mat load_color(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const cv::Mat& img);

// 64-bit difference hash: grayscale, area-resize to 9x8, one bit per
// horizontally adjacent pair (set when the left pixel is brighter).
std::uint64_t difference_hash(const cv::Mat& img);
int hamming_distance(std::uint64_t a, std::uint64_t b);

cv::Rect to_pixel_rect(const BoundingBox& box, Dimensions dims);

} // namespace groundkit::image
