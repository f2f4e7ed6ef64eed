#pragma once

#include <cstddef>
#include <optional>
#include <string_view>

#include "groundkit/core.hpp"

namespace groundkit {

enum class TargetKind { Point, Box, Failure };
enum class FailureReason { NoCoordinates, MalformedNumbers, OutOfRangeUnrecoverable };

std::string_view to_string(TargetKind kind);
std::string_view to_string(FailureReason reason);
TargetKind target_kind_from_string(std::string_view text);
FailureReason failure_reason_from_string(std::string_view text);

// Half-open character range [begin, end) into the raw reply.
struct SourceSpan {
    std::size_t begin = 0;
    std::size_t end = 0;

    friend bool operator==(const SourceSpan&, const SourceSpan&) = default;
};

/// What a model reply said, before any scoring. Exactly one of `point`, `box`
/// or `failure_reason` is populated, selected by `kind`.
struct ParsedTarget {
    TargetKind kind = TargetKind::Failure;
    std::optional<ClickPoint> point;
    std::optional<BoundingBox> box;
    std::optional<FailureReason> failure_reason = FailureReason::NoCoordinates;
    SourceSpan source_span;

    static ParsedTarget make_point(ClickPoint p, SourceSpan span = {});
    static ParsedTarget make_box(BoundingBox b, SourceSpan span = {});
    static ParsedTarget make_failure(FailureReason reason, SourceSpan span = {});

    bool ok() const { return kind != TargetKind::Failure; }
};

/// Extracts the first coordinate group from a free-text model reply.
///
/// Recognized groups, in reading order:
///   - bracketed pairs and 4-tuples: "(0.52, 0.35)", "[0.2, 0.3, 0.6, 0.7]"
///     (fields may carry a "px" or "%" suffix)
///   - labeled values in either order: "x=0.5, y=0.3", "\"x\": 0.5", "x1: .. y2: .."
///   - bare decimal pairs or quadruples: "0.52, 0.35"
///
/// A group holding any value above 1.5 is read as pixels and normalized
/// through `dims`; without dims that is an unrecoverable failure. Normalized
/// values are clamped to [0, 1]. 4-tuples are (x1, y1, x2, y2) boxes with
/// corners reordered; a box that collapses to zero area is reported as its
/// center point. A well-formed group anywhere wins over an earlier group with
/// unreadable numbers.
ParsedTarget parse_prediction(std::string_view raw, std::optional<Dimensions> dims = std::nullopt);

std::optional<ClickPoint> to_click_point(const ParsedTarget& target);

} // namespace groundkit
