#include "groundkit/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <fmt/format.h>

namespace groundkit {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::InvalidDimensions: return "invalid-dimensions";
    case ErrorCode::InvalidGeometry: return "invalid-geometry";
    case ErrorCode::WrongDirection: return "wrong-direction";
    case ErrorCode::LengthMismatch: return "length-mismatch";
    case ErrorCode::ProbabilityOutOfRange: return "probability-out-of-range";
    case ErrorCode::EmptyRun: return "empty-run";
    case ErrorCode::DuplicateSample: return "duplicate-sample";
    case ErrorCode::MissingResult: return "missing-result";
    case ErrorCode::TemplateError: return "template-error";
    case ErrorCode::EndpointUnavailable: return "endpoint-unavailable";
    case ErrorCode::RequestRejected: return "request-rejected";
    case ErrorCode::AssetError: return "asset-error";
    case ErrorCode::ConfigError: return "config-error";
    case ErrorCode::ParseError: return "parse-error";
    case ErrorCode::UnsupportedVersion: return "unsupported-version";
    case ErrorCode::NotFound: return "not-found";
    case ErrorCode::EmptyExport: return "empty-export";
    case ErrorCode::IoError: return "io-error";
    }
    return "unknown";
}

std::string_view to_string(AssetSource source) {
    switch (source) {
    case AssetSource::Search: return "search";
    case AssetSource::SimilarExpansion: return "similar-expansion";
    case AssetSource::Import: return "import";
    case AssetSource::Upload: return "upload";
    }
    return "upload";
}

AssetSource asset_source_from_string(std::string_view text) {
    if (text == "search") return AssetSource::Search;
    if (text == "similar-expansion") return AssetSource::SimilarExpansion;
    if (text == "import") return AssetSource::Import;
    if (text == "upload") return AssetSource::Upload;
    throw Error(ErrorCode::InvalidArgument, fmt::format("unknown asset source '{}'", text));
}

std::string_view to_string(Direction direction) {
    return direction == Direction::Forward ? "forward" : "reverse";
}

Direction direction_from_string(std::string_view text) {
    if (text == "forward") return Direction::Forward;
    if (text == "reverse") return Direction::Reverse;
    throw Error(ErrorCode::InvalidArgument, fmt::format("unknown direction '{}'", text));
}

bool BoundingBox::is_valid(double x1, double y1, double x2, double y2) {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(x1) || !finite(y1) || !finite(x2) || !finite(y2)) return false;
    return 0.0 <= x1 && x1 < x2 && x2 <= 1.0 && 0.0 <= y1 && y1 < y2 && y2 <= 1.0;
}

BoundingBox BoundingBox::make(double x1, double y1, double x2, double y2) {
    if (!is_valid(x1, y1, x2, y2)) {
        throw Error(ErrorCode::InvalidGeometry,
                    fmt::format("invalid box ({}, {}, {}, {}): need 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1",
                                x1, y1, x2, y2));
    }
    return BoundingBox(x1, y1, x2, y2);
}

Element make_element(std::string description, const BoundingBox& location) {
    if (trim(description).empty()) {
        throw Error(ErrorCode::InvalidArgument, "element description is empty");
    }
    return Element{std::move(description), location};
}

ClickPoint bbox_center(const BoundingBox& box) {
    return {(box.x1() + box.x2()) / 2.0, (box.y1() + box.y2()) / 2.0};
}

bool contains(const BoundingBox& box, const ClickPoint& point) {
    return box.x1() <= point.x && point.x <= box.x2() && box.y1() <= point.y && point.y <= box.y2();
}

double clamp_unit(double v) {
    if (std::isnan(v)) return 0.0;
    return std::clamp(v, 0.0, 1.0);
}

ClickPoint normalize_point(double px, double py, Dimensions dims) {
    if (dims.width < 1 || dims.height < 1) {
        throw Error(ErrorCode::InvalidDimensions,
                    fmt::format("invalid dimensions {}x{}", dims.width, dims.height));
    }
    return {clamp_unit(px / static_cast<double>(dims.width)),
            clamp_unit(py / static_cast<double>(dims.height))};
}

ClickPoint normalize_point(PixelPoint px, Dimensions dims) {
    return normalize_point(static_cast<double>(px.x), static_cast<double>(px.y), dims);
}

double point_distance(const ClickPoint& a, const ClickPoint& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

double iou(const BoundingBox& a, const BoundingBox& b) {
    const double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
    const double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double quantize6(double v) {
    return std::round(v * 1e6) / 1e6;
}

BoundingBox quantize_box(const BoundingBox& box) {
    return BoundingBox::make(quantize6(box.x1()), quantize6(box.y1()), quantize6(box.x2()), quantize6(box.y2()));
}

std::string format6(double v) {
    auto text = fmt::format("{:.6f}", v);
    if (text == "-0.000000") text = "0.000000";
    return text;
}

std::string trim(std::string_view text) {
    auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!text.empty() && is_space(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
    while (!text.empty() && is_space(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
    return std::string(text);
}

} // namespace groundkit
