#include <algorithm>
#include <cctype>
#include <regex>

#include <fmt/format.h>
#include <opencv2/imgproc.hpp>

#include "groundkit/forge.hpp"
#include "groundkit/image.hpp"
#include "groundkit/util.hpp"

namespace groundkit::forge {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(ProviderKind kind) {
    switch (kind) {
    case ProviderKind::Search: return "search";
    case ProviderKind::SimilarImage: return "similar-image";
    case ProviderKind::Detector: return "detector";
    case ProviderKind::Aligner: return "aligner";
    case ProviderKind::ValidityChecker: return "validity-checker";
    }
    return "search";
}

ProviderKind provider_kind_from_string(std::string_view text) {
    for (auto k : kAllProviderKinds) {
        if (to_string(k) == text) return k;
    }
    throw Error(ErrorCode::ConfigError, fmt::format("unknown provider kind '{}'", text));
}

int Providers::limit(ProviderKind kind) const {
    auto it = concurrency.find(kind);
    return it == concurrency.end() ? 1 : std::max(1, it->second);
}

namespace {

bool is_image_file(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".webp";
}

std::vector<std::string> list_images(const fs::path& dir, int limit) {
    std::vector<std::string> out;
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) return out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && is_image_file(entry.path())) out.push_back(entry.path().string());
    }
    std::sort(out.begin(), out.end());
    if (limit >= 0 && out.size() > static_cast<std::size_t>(limit)) out.resize(static_cast<std::size_t>(limit));
    return out;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

// ---- builtins

class NoSearch final : public SearchProvider {
public:
    std::vector<std::string> search(const std::string&, int) override { return {}; }
};

// <root>/<app>/*.png
class DirSearch final : public SearchProvider {
public:
    explicit DirSearch(fs::path root) : root_(std::move(root)) {}
    std::vector<std::string> search(const std::string& app, int limit) override { return list_images(root_ / app, limit); }

private:
    fs::path root_;
};

class NoSimilar final : public SimilarImageProvider {
public:
    std::vector<std::string> similar(const Candidate&, int) override { return {}; }
};

// <root>/<stem of the seed image>/*.png
class DirSimilar final : public SimilarImageProvider {
public:
    explicit DirSimilar(fs::path root) : root_(std::move(root)) {}
    std::vector<std::string> similar(const Candidate& seed, int limit) override {
        return list_images(root_ / fs::path(seed.locator).stem(), limit);
    }

private:
    fs::path root_;
};

class FixedVerdict final : public ValidityChecker {
public:
    explicit FixedVerdict(Verdict v) : v_(v) {}
    Verdict check(const cv::Mat&, std::span<const std::uint8_t>) override { return v_; }

private:
    Verdict v_;
};

// Rendered UIs are mostly flat colour; photographs are not.
class FlatRegionChecker final : public ValidityChecker {
public:
    Verdict check(const cv::Mat& image, std::span<const std::uint8_t>) override {
        cv::Mat gray, gx, gy, mag;
        cv::cvtColor(image, gray, image.channels() == 4 ? cv::COLOR_BGRA2GRAY : cv::COLOR_BGR2GRAY);
        cv::Sobel(gray, gx, CV_32F, 1, 0, 3);
        cv::Sobel(gray, gy, CV_32F, 0, 1, 3);
        cv::magnitude(gx, gy, mag);
        const double flat = static_cast<double>(cv::countNonZero(mag < 8.0f)) / static_cast<double>(mag.total());
        return flat >= 0.5 ? Verdict::Yes : Verdict::No;
    }
};

std::string vertical_word(double y) {
    return y < 1.0 / 3 ? "upper" : (y < 2.0 / 3 ? "middle" : "lower");
}
std::string horizontal_word(double x) {
    return x < 1.0 / 3 ? "left" : (x < 2.0 / 3 ? "center" : "right");
}

class GeometryAligner final : public Aligner {
public:
    std::string describe(const cv::Mat&, const BoundingBox& box) override {
        const auto c = bbox_center(box);
        const char* size = box.area() < 0.002 ? "Small icon" : (box.area() < 0.02 ? "Button" : "Panel");
        return fmt::format("{} in the {} {} area at ({:.0f}%, {:.0f}%)", size, vertical_word(c.y), horizontal_word(c.x),
                           c.x * 100.0, c.y * 100.0);
    }
};

class FixedAligner final : public Aligner {
public:
    explicit FixedAligner(std::string text) : text_(std::move(text)) {}
    std::string describe(const cv::Mat&, const BoundingBox&) override { return text_; }

private:
    std::string text_;
};

// ---- chat-backed

std::string hash_tag(const cv::Mat& image) {
    return fmt::format("{:016x}", image::difference_hash(image));
}

ChatImage png_image(const cv::Mat& m) {
    return ChatImage{"image/png", image::encode_png(m)};
}

std::vector<std::string> locator_lines(const std::string& reply, int limit) {
    static const std::regex url(R"((https?://[^\s"'<>)\]]+))");
    std::vector<std::string> out;
    for (auto it = std::sregex_iterator(reply.begin(), reply.end(), url); it != std::sregex_iterator(); ++it) {
        if (static_cast<int>(out.size()) >= limit) break;
        out.push_back((*it)[1].str());
    }
    return out;
}

class ChatSearch final : public SearchProvider {
public:
    ChatSearch(ChatClient client, std::string prompt) : client_(std::move(client)), prompt_(std::move(prompt)) {}
    std::vector<std::string> search(const std::string& app, int limit) override {
        std::string p = prompt_;
        p = std::regex_replace(p, std::regex(R"(\{app\})"), app);
        p = std::regex_replace(p, std::regex(R"(\{limit\})"), std::to_string(limit));
        return locator_lines(client_.complete(p, {}, "search/" + app).text, limit);
    }

private:
    ChatClient client_;
    std::string prompt_;
};

class ChatSimilar final : public SimilarImageProvider {
public:
    ChatSimilar(ChatClient client, std::string prompt) : client_(std::move(client)), prompt_(std::move(prompt)) {}
    std::vector<std::string> similar(const Candidate& seed, int limit) override {
        const ChatImage img{image_mime_type(seed.locator), seed.bytes};
        const auto p = std::regex_replace(prompt_, std::regex(R"(\{limit\})"), std::to_string(limit));
        return locator_lines(client_.complete(p, std::span<const ChatImage>(&img, 1), "similar/" + seed.content_hash.substr(0, 16)).text,
                             limit);
    }

private:
    ChatClient client_;
    std::string prompt_;
};

class ChatChecker final : public ValidityChecker {
public:
    ChatChecker(ChatClient client, std::string prompt) : client_(std::move(client)), prompt_(std::move(prompt)) {}
    Verdict check(const cv::Mat& image, std::span<const std::uint8_t>) override {
        try {
            const auto img = png_image(image);
            auto reply = lower(trim(client_.complete(prompt_, std::span<const ChatImage>(&img, 1), "validity/" + hash_tag(image)).text));
            if (reply.rfind("yes", 0) == 0) return Verdict::Yes;
            if (reply.rfind("no", 0) == 0) return Verdict::No;
            return Verdict::Unavailable;
        } catch (const EndpointError&) {
            return Verdict::Unavailable;
        }
    }

private:
    ChatClient client_;
    std::string prompt_;
};

class ChatDetector final : public Detector {
public:
    ChatDetector(ChatClient client, std::string prompt) : client_(std::move(client)), prompt_(std::move(prompt)) {}
    std::vector<BoundingBox> detect(const cv::Mat& image) override {
        const auto img = png_image(image);
        const auto reply = client_.complete(prompt_, std::span<const ChatImage>(&img, 1), "detect/" + hash_tag(image)).text;
        static const std::regex quad(
            R"(\[\s*([-+]?[0-9]*\.?[0-9]+)\s*,\s*([-+]?[0-9]*\.?[0-9]+)\s*,\s*([-+]?[0-9]*\.?[0-9]+)\s*,\s*([-+]?[0-9]*\.?[0-9]+)\s*\])");
        std::vector<BoundingBox> out;
        for (auto it = std::sregex_iterator(reply.begin(), reply.end(), quad); it != std::sregex_iterator(); ++it) {
            double v[4];
            for (int i = 0; i < 4; ++i) v[i] = std::stod((*it)[i + 1].str());
            if (std::any_of(v, v + 4, [](double x) { return x > 1.5; })) {
                v[0] /= image.cols, v[2] /= image.cols, v[1] /= image.rows, v[3] /= image.rows;
            }
            for (auto& x : v) x = quantize6(clamp_unit(x));
            if (BoundingBox::is_valid(v[0], v[1], v[2], v[3])) out.push_back(BoundingBox::make(v[0], v[1], v[2], v[3]));
        }
        return out;
    }

private:
    ChatClient client_;
    std::string prompt_;
};

class ChatAligner final : public Aligner {
public:
    ChatAligner(ChatClient client, std::string prompt) : client_(std::move(client)), prompt_(std::move(prompt)) {}
    std::string describe(const cv::Mat& image, const BoundingBox& box) override {
        const ChatImage imgs[2] = {png_image(overlay_box(image, box)), png_image(crop_box(image, box))};
        const auto id = fmt::format("align/{}/{},{},{},{}", hash_tag(image), format6(box.x1()), format6(box.y1()),
                                    format6(box.x2()), format6(box.y2()));
        try {
            return client_.complete(prompt_, imgs, id).text;
        } catch (const EndpointError& e) {
            if (e.code() == ErrorCode::RequestRejected) return {};
            throw;
        }
    }

private:
    ChatClient client_;
    std::string prompt_;
};

const char* default_prompt(ProviderKind kind) {
    switch (kind) {
    case ProviderKind::Search:
        return "List up to {limit} direct image URLs of real screenshots of the Windows application \"{app}\", one per line.";
    case ProviderKind::SimilarImage:
        return "List up to {limit} direct image URLs of screenshots similar to the attached one, one per line.";
    case ProviderKind::Detector:
        return "List a bounding box for every clickable icon, button or control in this screenshot as "
               "[x1, y1, x2, y2] in coordinates normalized to 0..1, one per line.";
    case ProviderKind::Aligner:
        return "The first image is a screenshot with one element outlined in red. The second image is a close-up of "
               "that element. In one short phrase, describe what the element is and what clicking it does.";
    case ProviderKind::ValidityChecker:
        return "Is this image a valid screenshot of a desktop software application? Answer yes or no.";
    }
    return "";
}

EndpointConfig endpoint_from_json(const json& j) {
    EndpointConfig c;
    c.base_url = j.value("base_url", c.base_url);
    c.model_name = j.value("model_name", c.model_name);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.temperature = j.value("temperature", c.temperature);
    c.backoff_initial = std::chrono::milliseconds(j.value("backoff_initial_ms", static_cast<int>(c.backoff_initial.count())));
    c.validate();
    if (!c.api_key_env.empty()) {
        const char* key = std::getenv(c.api_key_env.c_str());
        if (!key || !*key) throw Error(ErrorCode::ConfigError, fmt::format("environment variable {} is not set", c.api_key_env));
    }
    return c;
}

struct Builtin {
    std::string name;
    std::string arg;
};

Builtin split_builtin(const std::string& spec) {
    if (spec.rfind("builtin:", 0) != 0) {
        throw Error(ErrorCode::ConfigError, fmt::format("provider '{}' must be 'builtin:<name>' or an endpoint object", spec));
    }
    const auto rest = spec.substr(8);
    const auto colon = rest.find(':');
    if (colon == std::string::npos) return {rest, {}};
    return {rest.substr(0, colon), rest.substr(colon + 1)};
}

fs::path resolve_dir(const std::string& arg, const fs::path& base) {
    if (arg.empty()) throw Error(ErrorCode::ConfigError, "builtin:dir needs a directory argument");
    fs::path p(arg);
    return p.is_absolute() ? p : base / p;
}

[[noreturn]] void unknown_builtin(ProviderKind kind, const std::string& name) {
    throw Error(ErrorCode::ConfigError, fmt::format("unknown builtin '{}' for provider {}", name, to_string(kind)));
}

} // namespace

Providers resolve_providers(const json& bindings, const fs::path& base_dir) {
    if (!bindings.is_object()) throw Error(ErrorCode::ConfigError, "providers must be an object");
    for (const auto& [key, _] : bindings.items()) (void)provider_kind_from_string(key);

    Providers p;
    for (auto kind : kAllProviderKinds) {
        const auto name = std::string(to_string(kind));
        if (!bindings.contains(name)) throw Error(ErrorCode::ConfigError, fmt::format("provider '{}' is not bound", name));
        const auto& b = bindings.at(name);

        if (b.is_string()) {
            const auto bi = split_builtin(b.get<std::string>());
            switch (kind) {
            case ProviderKind::Search:
                if (bi.name == "dir") p.search = std::make_unique<DirSearch>(resolve_dir(bi.arg, base_dir));
                else if (bi.name == "none") p.search = std::make_unique<NoSearch>();
                else unknown_builtin(kind, bi.name);
                break;
            case ProviderKind::SimilarImage:
                if (bi.name == "dir") p.similar = std::make_unique<DirSimilar>(resolve_dir(bi.arg, base_dir));
                else if (bi.name == "none") p.similar = std::make_unique<NoSimilar>();
                else unknown_builtin(kind, bi.name);
                break;
            case ProviderKind::Detector:
                if (bi.name == "heuristic") p.detector = make_heuristic_detector();
                else unknown_builtin(kind, bi.name);
                break;
            case ProviderKind::Aligner:
                if (bi.name == "geometry") p.aligner = std::make_unique<GeometryAligner>();
                else if (bi.name == "fixed" && !bi.arg.empty()) p.aligner = std::make_unique<FixedAligner>(bi.arg);
                else unknown_builtin(kind, bi.name);
                break;
            case ProviderKind::ValidityChecker:
                if (bi.name == "always-yes") p.checker = std::make_unique<FixedVerdict>(Verdict::Yes);
                else if (bi.name == "always-no") p.checker = std::make_unique<FixedVerdict>(Verdict::No);
                else if (bi.name == "heuristic") p.checker = std::make_unique<FlatRegionChecker>();
                else unknown_builtin(kind, bi.name);
                break;
            }
            continue;
        }

        if (!b.is_object() || !b.contains("endpoint")) {
            throw Error(ErrorCode::ConfigError, fmt::format("provider '{}' must be a builtin string or have an endpoint", name));
        }
        ChatClient client(endpoint_from_json(b.at("endpoint")));
        const std::string prompt = b.value("prompt", std::string(default_prompt(kind)));
        p.concurrency[kind] = b.value("max_concurrency", 1);
        if (p.concurrency[kind] < 1) throw Error(ErrorCode::ConfigError, fmt::format("{}.max_concurrency must be >= 1", name));
        switch (kind) {
        case ProviderKind::Search: p.search = std::make_unique<ChatSearch>(client, prompt); break;
        case ProviderKind::SimilarImage: p.similar = std::make_unique<ChatSimilar>(client, prompt); break;
        case ProviderKind::Detector: p.detector = std::make_unique<ChatDetector>(client, prompt); break;
        case ProviderKind::Aligner: p.aligner = std::make_unique<ChatAligner>(client, prompt); break;
        case ProviderKind::ValidityChecker: p.checker = std::make_unique<ChatChecker>(client, prompt); break;
        }
    }
    return p;
}

} // namespace groundkit::forge
