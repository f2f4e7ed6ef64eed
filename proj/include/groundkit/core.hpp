#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "groundkit/error.hpp"

namespace groundkit {

/// A position in normalized units: fractions of the screenshot width and height.
struct ClickPoint {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const ClickPoint&, const ClickPoint&) = default;
};

/// Axis-aligned target box in normalized units. Construct through `make`,
/// which rejects anything outside [0,1] and zero-area boxes.
class BoundingBox {
public:
    BoundingBox() = default;

    static BoundingBox make(double x1, double y1, double x2, double y2);
    static bool is_valid(double x1, double y1, double x2, double y2);

    double x1() const { return x1_; }
    double y1() const { return y1_; }
    double x2() const { return x2_; }
    double y2() const { return y2_; }
    double width() const { return x2_ - x1_; }
    double height() const { return y2_ - y1_; }
    double area() const { return width() * height(); }

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;

private:
    BoundingBox(double x1, double y1, double x2, double y2) : x1_(x1), y1_(y1), x2_(x2), y2_(y2) {}

    double x1_ = 0.0;
    double y1_ = 0.0;
    double x2_ = 1.0;
    double y2_ = 1.0;
};

struct PixelPoint {
    std::int64_t x = 0;
    std::int64_t y = 0;
};

struct Dimensions {
    std::int64_t width = 0;
    std::int64_t height = 0;

    friend bool operator==(const Dimensions&, const Dimensions&) = default;
};

enum class AssetSource { Search, SimilarExpansion, Import, Upload };
enum class Direction { Forward, Reverse };

std::string_view to_string(AssetSource source);
AssetSource asset_source_from_string(std::string_view text);
std::string_view to_string(Direction direction);
Direction direction_from_string(std::string_view text);

struct ScreenshotAsset {
    std::string id;
    std::string image_path; // relative to the manifest directory when persisted
    std::int64_t width_px = 0;
    std::int64_t height_px = 0;
    std::string content_hash; // lowercase hex SHA-256 of the file bytes
    AssetSource source = AssetSource::Upload;
    std::string app_category;
    bool privacy_flag = false;

    Dimensions dims() const { return {width_px, height_px}; }
    friend bool operator==(const ScreenshotAsset&, const ScreenshotAsset&) = default;
};

struct Element {
    std::string description;
    BoundingBox location;

    friend bool operator==(const Element&, const Element&) = default;
};

Element make_element(std::string description, const BoundingBox& location);

struct GroundingSample {
    std::string sample_id;
    std::string asset_id;
    std::string instruction;
    BoundingBox target;
    Direction direction = Direction::Forward;
    std::string category;

    friend bool operator==(const GroundingSample&, const GroundingSample&) = default;
};

ClickPoint bbox_center(const BoundingBox& box);

// Closed-box containment: boundary hits count as inside.
bool contains(const BoundingBox& box, const ClickPoint& point);

ClickPoint normalize_point(PixelPoint px, Dimensions dims);

// Real-valued variant used by the reply parser, where pixel values may carry decimals.
ClickPoint normalize_point(double px, double py, Dimensions dims);

double point_distance(const ClickPoint& a, const ClickPoint& b);

double clamp_unit(double v);

// Intersection over union of two boxes; 0 when disjoint.
double iou(const BoundingBox& a, const BoundingBox& b);

// Coordinates persist with six decimal digits.
double quantize6(double v);
BoundingBox quantize_box(const BoundingBox& box);
std::string format6(double v);

std::string trim(std::string_view text);

} // namespace groundkit
