#include "groundkit/coordparse.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <regex>
#include <string>
#include <vector>

#include <fmt/format.h>

namespace groundkit {

std::string_view to_string(TargetKind kind) {
    switch (kind) {
    case TargetKind::Point: return "point";
    case TargetKind::Box: return "box";
    case TargetKind::Failure: return "failure";
    }
    return "failure";
}

std::string_view to_string(FailureReason reason) {
    switch (reason) {
    case FailureReason::NoCoordinates: return "no-coordinates";
    case FailureReason::MalformedNumbers: return "malformed-numbers";
    case FailureReason::OutOfRangeUnrecoverable: return "out-of-range-unrecoverable";
    }
    return "no-coordinates";
}

TargetKind target_kind_from_string(std::string_view text) {
    if (text == "point") return TargetKind::Point;
    if (text == "box") return TargetKind::Box;
    if (text == "failure") return TargetKind::Failure;
    throw Error(ErrorCode::InvalidArgument, fmt::format("unknown target kind '{}'", text));
}

FailureReason failure_reason_from_string(std::string_view text) {
    if (text == "no-coordinates") return FailureReason::NoCoordinates;
    if (text == "malformed-numbers") return FailureReason::MalformedNumbers;
    if (text == "out-of-range-unrecoverable") return FailureReason::OutOfRangeUnrecoverable;
    throw Error(ErrorCode::InvalidArgument, fmt::format("unknown failure reason '{}'", text));
}

ParsedTarget ParsedTarget::make_point(ClickPoint p, SourceSpan span) {
    ParsedTarget t;
    t.kind = TargetKind::Point;
    t.point = p;
    t.failure_reason.reset();
    t.source_span = span;
    return t;
}

ParsedTarget ParsedTarget::make_box(BoundingBox b, SourceSpan span) {
    ParsedTarget t;
    t.kind = TargetKind::Box;
    t.box = b;
    t.failure_reason.reset();
    t.source_span = span;
    return t;
}

ParsedTarget ParsedTarget::make_failure(FailureReason reason, SourceSpan span) {
    ParsedTarget t;
    t.kind = TargetKind::Failure;
    t.failure_reason = reason;
    t.source_span = span;
    return t;
}

std::optional<ClickPoint> to_click_point(const ParsedTarget& target) {
    switch (target.kind) {
    case TargetKind::Point: return target.point;
    case TargetKind::Box: return bbox_center(*target.box);
    case TargetKind::Failure: return std::nullopt;
    }
    return std::nullopt;
}

namespace {

constexpr double kPixelThreshold = 1.5;
constexpr std::size_t kMaxLabelGap = 24;

enum class FieldClass { Number, Malformed, Other };

struct Field {
    FieldClass cls = FieldClass::Other;
    double value = 0.0;
};

struct Candidate {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::vector<double> values; // (x, y) or (x1, y1, x2, y2)
    bool malformed = false;
};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view strip(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

bool ends_with_ci(std::string_view s, std::string_view suffix) {
    if (s.size() < suffix.size()) return false;
    for (std::size_t i = 0; i < suffix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(s[s.size() - suffix.size() + i])) != suffix[i]) return false;
    }
    return true;
}

bool strict_number(std::string_view s, double& out) {
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return false;
    // from_chars rejects leading '+' and accepts "inf"/"nan", which are not coordinates.
    for (char c : s) {
        if (!(std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == 'e' || c == 'E')) {
            return false;
        }
    }
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last) return false;
    return std::any_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

Field classify_field(std::string_view raw) {
    auto s = strip(raw);
    while (!s.empty() && (s.back() == '"' || s.back() == '\'')) s.remove_suffix(1);
    while (!s.empty() && (s.front() == '"' || s.front() == '\'')) s.remove_prefix(1);
    double scale = 1.0;
    if (ends_with_ci(s, "px")) {
        s.remove_suffix(2);
    } else if (!s.empty() && s.back() == '%') {
        s.remove_suffix(1);
        scale = 0.01;
    }
    s = strip(s);
    Field f;
    double v = 0.0;
    if (strict_number(s, v)) {
        f.cls = FieldClass::Number;
        f.value = v * scale;
        return f;
    }
    const bool numeric_chars = !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
        return std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '+' || c == 'e' ||
               c == 'E';
    });
    const bool has_digit =
        std::any_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
    f.cls = (numeric_chars && has_digit) ? FieldClass::Malformed : FieldClass::Other;
    return f;
}

std::vector<std::string_view> split_fields(std::string_view content) {
    std::vector<std::string_view> out;
    const bool has_separator = content.find_first_of(",;") != std::string_view::npos;
    std::size_t start = 0;
    if (has_separator) {
        for (std::size_t i = 0; i <= content.size(); ++i) {
            if (i == content.size() || content[i] == ',' || content[i] == ';') {
                out.push_back(content.substr(start, i - start));
                start = i + 1;
            }
        }
        return out;
    }
    std::size_t i = 0;
    while (i < content.size()) {
        while (i < content.size() && is_space(content[i])) ++i;
        if (i >= content.size()) break;
        std::size_t j = i;
        while (j < content.size() && !is_space(content[j])) ++j;
        out.push_back(content.substr(i, j - i));
        i = j;
    }
    return out;
}

void collect_bracket_candidates(std::string_view raw, std::vector<Candidate>& out) {
    constexpr std::string_view openers = "([{";
    constexpr std::string_view closers = ")]}";
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (openers.find(raw[i]) == std::string_view::npos) continue;
        std::size_t j = i + 1;
        bool nested = false;
        for (; j < raw.size(); ++j) {
            if (closers.find(raw[j]) != std::string_view::npos) break;
            if (openers.find(raw[j]) != std::string_view::npos) {
                nested = true;
                break;
            }
        }
        if (nested || j >= raw.size()) continue;
        auto fields = split_fields(raw.substr(i + 1, j - i - 1));
        if (fields.size() != 2 && fields.size() != 4) continue;
        Candidate c{i, j + 1, {}, false};
        bool usable = true;
        for (auto field : fields) {
            auto f = classify_field(field);
            if (f.cls == FieldClass::Other) {
                usable = false;
                break;
            }
            if (f.cls == FieldClass::Malformed) c.malformed = true;
            c.values.push_back(f.value);
        }
        if (usable) out.push_back(std::move(c));
    }
}

struct LabeledValue {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::string label; // x, y, x1, y1, x2, y2
    Field field;
};

void collect_labeled_candidates(std::string_view raw, std::vector<Candidate>& out) {
    static const std::regex label_re(R"((^|[^A-Za-z0-9_])(["']?)([xXyY][12]?)\2\s*[:=]\s*([-+]?\.?[0-9][-+0-9.eE]*(?:px|PX|%)?))");
    std::vector<LabeledValue> values;
    const std::string text(raw);
    for (auto it = std::sregex_iterator(text.begin(), text.end(), label_re); it != std::sregex_iterator(); ++it) {
        const auto& m = *it;
        LabeledValue v;
        v.begin = static_cast<std::size_t>(m.position(2));
        v.end = static_cast<std::size_t>(m.position(4) + m.length(4));
        v.label = m.str(3);
        std::transform(v.label.begin(), v.label.end(), v.label.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        auto token = m.str(4);
        while (!token.empty() && (token.back() == '.' || token.back() == ':')) token.pop_back();
        v.field = classify_field(token);
        if (v.field.cls == FieldClass::Other) continue;
        values.push_back(std::move(v));
    }

    std::size_t i = 0;
    while (i < values.size()) {
        std::size_t j = i + 1;
        while (j < values.size()) {
            auto gap = raw.substr(values[j - 1].end, values[j].begin - values[j - 1].end);
            const bool digits = std::any_of(gap.begin(), gap.end(),
                                            [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
            if (digits || gap.size() > kMaxLabelGap) break;
            ++j;
        }
        std::map<std::string, const LabeledValue*> by_label;
        for (std::size_t k = i; k < j; ++k) by_label.emplace(values[k].label, &values[k]);

        auto build = [&](std::initializer_list<const char*> labels) -> std::optional<Candidate> {
            Candidate c;
            c.begin = std::string::npos;
            for (const char* l : labels) {
                auto found = by_label.find(l);
                if (found == by_label.end()) return std::nullopt;
                const auto* v = found->second;
                c.values.push_back(v->field.value);
                if (v->field.cls == FieldClass::Malformed) c.malformed = true;
                c.begin = std::min(c.begin, v->begin);
                c.end = std::max(c.end, v->end);
            }
            return c;
        };
        if (auto box = build({"x1", "y1", "x2", "y2"})) {
            out.push_back(std::move(*box));
        } else if (auto point = build({"x", "y"})) {
            out.push_back(std::move(*point));
        }
        i = j;
    }
}

void collect_bare_candidates(std::string_view raw, std::vector<Candidate>& out) {
    static const std::regex bare_re(
        R"(([-+]?\d*\.\d+)\s*,\s*([-+]?\d*\.\d+)(?:\s*,\s*([-+]?\d*\.\d+)\s*,\s*([-+]?\d*\.\d+))?)");
    const std::string text(raw);
    for (auto it = std::sregex_iterator(text.begin(), text.end(), bare_re); it != std::sregex_iterator(); ++it) {
        const auto& m = *it;
        const auto begin = static_cast<std::size_t>(m.position(0));
        if (begin > 0) {
            const char prev = raw[begin - 1];
            if (std::isdigit(static_cast<unsigned char>(prev)) || prev == '.') continue;
        }
        Candidate c{begin, begin + static_cast<std::size_t>(m.length(0)), {}, false};
        const int groups = m[3].matched ? 4 : 2;
        for (int g = 1; g <= groups; ++g) {
            auto f = classify_field(m.str(g));
            if (f.cls != FieldClass::Number) c.malformed = true;
            c.values.push_back(f.value);
        }
        out.push_back(std::move(c));
    }
}

ParsedTarget interpret(const Candidate& c, const std::optional<Dimensions>& dims) {
    const SourceSpan span{c.begin, c.end};
    const bool pixel = std::any_of(c.values.begin(), c.values.end(), [](double v) { return v > kPixelThreshold; });
    std::vector<double> v = c.values;
    if (pixel) {
        if (!dims || dims->width < 1 || dims->height < 1) {
            return ParsedTarget::make_failure(FailureReason::OutOfRangeUnrecoverable, span);
        }
        for (std::size_t k = 0; k < v.size(); ++k) {
            const double extent = static_cast<double>(k % 2 == 0 ? dims->width : dims->height);
            v[k] = clamp_unit(v[k] / extent);
        }
    } else {
        for (auto& x : v) x = clamp_unit(x);
    }
    if (v.size() == 2) return ParsedTarget::make_point({v[0], v[1]}, span);

    const double x1 = std::min(v[0], v[2]);
    const double x2 = std::max(v[0], v[2]);
    const double y1 = std::min(v[1], v[3]);
    const double y2 = std::max(v[1], v[3]);
    if (BoundingBox::is_valid(x1, y1, x2, y2)) {
        return ParsedTarget::make_box(BoundingBox::make(x1, y1, x2, y2), span);
    }
    return ParsedTarget::make_point({(x1 + x2) / 2.0, (y1 + y2) / 2.0}, span);
}

} // namespace

ParsedTarget parse_prediction(std::string_view raw, std::optional<Dimensions> dims) {
    std::vector<Candidate> candidates;
    collect_bracket_candidates(raw, candidates);
    collect_labeled_candidates(raw, candidates);
    collect_bare_candidates(raw, candidates);

    std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.begin != b.begin) return a.begin < b.begin;
        return a.values.size() > b.values.size();
    });

    const Candidate* first_malformed = nullptr;
    for (const auto& c : candidates) {
        if (c.malformed) {
            if (!first_malformed) first_malformed = &c;
            continue;
        }
        return interpret(c, dims);
    }
    if (first_malformed) {
        return ParsedTarget::make_failure(FailureReason::MalformedNumbers,
                                          {first_malformed->begin, first_malformed->end});
    }
    return ParsedTarget::make_failure(FailureReason::NoCoordinates, {0, raw.size()});
}

} // namespace groundkit
