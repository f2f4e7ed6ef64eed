#include "groundkit/gateway.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <mutex>
#include <regex>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <opencv2/imgproc.hpp>

#include "groundkit/image.hpp"
#include "groundkit/util.hpp"

namespace groundkit {

using nlohmann::json;

namespace {

void check_template(const PromptTemplate& t) {
    if (t.template_id.empty()) throw Error(ErrorCode::TemplateError, "template id is empty");
    auto has = [&](const char* ph) { return t.body.find(ph) != std::string::npos; };
    if (t.direction == Direction::Forward && !has("{instruction}")) {
        throw Error(ErrorCode::TemplateError, fmt::format("forward template '{}' lacks {{instruction}}", t.template_id));
    }
    if (t.direction == Direction::Reverse && (!has("{x}") || !has("{y}"))) {
        throw Error(ErrorCode::TemplateError, fmt::format("reverse template '{}' lacks {{x}} or {{y}}", t.template_id));
    }
}

void replace_all(std::string& text, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
}

} // namespace

const TemplateRegistry& TemplateRegistry::builtin() {
    static const TemplateRegistry registry = with_builtins();
    return registry;
}

TemplateRegistry TemplateRegistry::with_builtins() {
    TemplateRegistry r;
    r.add({kDefaultForwardTemplate, Direction::Forward, "I want to {instruction}, where should I click to {instruction}?"});
    r.add({"where-click", Direction::Forward, "Where should I click to {instruction}?"});
    r.add({kDefaultReverseTemplate, Direction::Reverse, "What is the element at ({x}, {y})?"});
    return r;
}

void TemplateRegistry::add(PromptTemplate t) {
    check_template(t);
    auto id = t.template_id;
    templates_[id] = std::move(t);
}

const PromptTemplate& TemplateRegistry::get(const std::string& id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw Error(ErrorCode::TemplateError, fmt::format("unknown template '{}'", id));
    return it->second;
}

std::vector<std::string> TemplateRegistry::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : templates_) out.push_back(id);
    return out;
}

std::string render_prompt(const PromptTemplate& t, const GroundingSample& sample) {
    if (t.direction != sample.direction) {
        throw Error(ErrorCode::WrongDirection,
                    fmt::format("template '{}' is {} but sample '{}' is {}", t.template_id, to_string(t.direction),
                                sample.sample_id, to_string(sample.direction)));
    }
    std::string out = t.body;
    if (t.direction == Direction::Forward) {
        if (trim(sample.instruction).empty()) {
            throw Error(ErrorCode::TemplateError, fmt::format("sample '{}' has no instruction", sample.sample_id));
        }
        replace_all(out, "{instruction}", sample.instruction);
    } else {
        const auto c = bbox_center(sample.target);
        replace_all(out, "{x}", format6(c.x));
        replace_all(out, "{y}", format6(c.y));
    }
    // Only the template body is scanned; substituted text may contain braces.
    static const std::regex placeholder(R"(\{[A-Za-z_][A-Za-z0-9_]*\})");
    std::smatch m;
    std::string residue = t.body;
    for (const char* known : {"{instruction}", "{x}", "{y}"}) {
        const bool allowed = t.direction == Direction::Forward ? std::string_view(known) == "{instruction}"
                                                               : std::string_view(known) != "{instruction}";
        if (allowed) replace_all(residue, known, "");
    }
    if (std::regex_search(residue, m, placeholder)) {
        throw Error(ErrorCode::TemplateError,
                    fmt::format("template '{}' has unresolved placeholder {}", t.template_id, m.str()));
    }
    return out;
}

json prediction_to_json(const Prediction& p, bool include_latency) {
    json parsed{{"kind", to_string(p.parsed.kind)},
                {"span", json::array({p.parsed.source_span.begin, p.parsed.source_span.end})}};
    if (p.parsed.point) parsed["point"] = json::array({p.parsed.point->x, p.parsed.point->y});
    if (p.parsed.box) {
        const auto& b = *p.parsed.box;
        parsed["box"] = json::array({b.x1(), b.y1(), b.x2(), b.y2()});
    }
    if (p.parsed.kind == TargetKind::Failure && p.parsed.failure_reason) {
        parsed["reason"] = to_string(*p.parsed.failure_reason);
    }
    json j{{"sample_id", p.sample_id},   {"raw_text", p.raw_text},         {"parsed", parsed},
           {"attempt_count", p.attempt_count}, {"model_name", p.model_name}};
    if (!p.error.empty()) {
        j["error"] = p.error;
        j["error_note"] = p.error_note;
    }
    if (include_latency) j["latency_ms"] = p.latency_ms;
    return j;
}

Prediction prediction_from_json(const json& j) {
    Prediction p;
    p.sample_id = j.at("sample_id").get<std::string>();
    p.raw_text = j.at("raw_text").get<std::string>();
    p.attempt_count = j.at("attempt_count").get<int>();
    p.model_name = j.at("model_name").get<std::string>();
    p.error = j.value("error", "");
    p.error_note = j.value("error_note", "");
    p.latency_ms = j.value("latency_ms", 0.0);
    const auto& parsed = j.at("parsed");
    const auto span_v = parsed.at("span").get<std::vector<std::size_t>>();
    const SourceSpan span{span_v.at(0), span_v.at(1)};
    switch (target_kind_from_string(parsed.at("kind").get<std::string>())) {
    case TargetKind::Point: {
        const auto v = parsed.at("point").get<std::vector<double>>();
        p.parsed = ParsedTarget::make_point({v.at(0), v.at(1)}, span);
        break;
    }
    case TargetKind::Box: {
        const auto v = parsed.at("box").get<std::vector<double>>();
        p.parsed = ParsedTarget::make_box(BoundingBox::make(v.at(0), v.at(1), v.at(2), v.at(3)), span);
        break;
    }
    case TargetKind::Failure:
        p.parsed = ParsedTarget::make_failure(failure_reason_from_string(parsed.value("reason", "no-coordinates")), span);
        break;
    }
    return p;
}

std::string render_predictions(std::vector<Prediction> predictions) {
    std::sort(predictions.begin(), predictions.end(),
              [](const Prediction& a, const Prediction& b) { return a.sample_id < b.sample_id; });
    std::string out;
    for (const auto& p : predictions) {
        out += prediction_to_json(p, false).dump();
        out += '\n';
    }
    return out;
}

std::vector<Prediction> parse_predictions(std::string_view text) {
    std::vector<Prediction> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            out.push_back(prediction_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw Error(ErrorCode::ParseError, fmt::format("predictions line {}: {}", line_no, e.what()));
        }
    }
    return out;
}

QueryResult query_model(const ChatClient& client, const std::string& prompt, const ScreenshotAsset& asset,
                        const std::filesystem::path& image_path, const std::string& request_id) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = read_file_bytes(image_path);
    } catch (const std::exception& e) {
        throw Error(ErrorCode::AssetError, fmt::format("asset '{}': cannot read {}: {}", asset.id, image_path.string(), e.what()));
    }
    ChatImage img{image_mime_type(image_path), {}};
    Dimensions sent = asset.dims();
    const int longest = client.config().resize_longest_side;
    if (longest > 0) {
        auto mat = image::load_color(image_path);
        const int side = std::max(mat.cols, mat.rows);
        if (side > longest) {
            const double scale = static_cast<double>(longest) / side;
            cv::Mat small;
            cv::resize(mat, small, cv::Size(std::max(1, static_cast<int>(std::lround(mat.cols * scale))),
                                            std::max(1, static_cast<int>(std::lround(mat.rows * scale)))),
                       0, 0, cv::INTER_AREA);
            bytes = image::encode_png(small);
            img.mime_type = "image/png";
            sent = {small.cols, small.rows};
        }
    }
    img.bytes = std::move(bytes);
    const auto reply = client.complete(prompt, std::span<const ChatImage>(&img, 1), request_id);
    return {reply.text, reply.attempts, reply.latency_ms, sent};
}

namespace {

std::map<std::string, Prediction> load_journal(const std::filesystem::path& path) {
    std::map<std::string, Prediction> done;
    std::ifstream in(path);
    if (!in) return done;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        try {
            auto p = prediction_from_json(json::parse(line));
            done[p.sample_id] = std::move(p);
        } catch (const std::exception&) {
            // a torn final line from an interrupted writer
        }
    }
    return done;
}

class JournalWriter {
public:
    JournalWriter(const std::filesystem::path& path, std::function<void(const Prediction&)> hook)
        : hook_(std::move(hook)) {
        if (!path.empty()) {
            if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
            // a torn tail must not glue onto the next record
            bool needs_newline = false;
            if (std::filesystem::exists(path) && std::filesystem::file_size(path) > 0) {
                std::ifstream probe(path, std::ios::binary);
                probe.seekg(-1, std::ios::end);
                needs_newline = probe.get() != '\n';
            }
            out_.open(path, std::ios::app | std::ios::binary);
            if (!out_) throw Error(ErrorCode::IoError, fmt::format("cannot open journal {}", path.string()));
            if (needs_newline) out_ << '\n';
        }
        thread_ = std::thread([this] { loop(); });
    }

    ~JournalWriter() { close(); }

    void push(Prediction p) {
        {
            std::lock_guard lock(mu_);
            queue_.push_back(std::move(p));
        }
        cv_.notify_one();
    }

    void close() {
        {
            std::lock_guard lock(mu_);
            if (closed_) return;
            closed_ = true;
        }
        cv_.notify_one();
        if (thread_.joinable()) thread_.join();
    }

private:
    void loop() {
        for (;;) {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [&] { return closed_ || !queue_.empty(); });
            if (queue_.empty()) return;
            auto p = std::move(queue_.front());
            queue_.pop_front();
            lock.unlock();
            if (out_.is_open() && p.error != to_string(ErrorCode::EndpointUnavailable)) {
                out_ << prediction_to_json(p, true).dump() << '\n';
                out_.flush();
            }
            if (hook_) hook_(p);
        }
    }

    std::ofstream out_;
    std::function<void(const Prediction&)> hook_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Prediction> queue_;
    bool closed_ = false;
    std::thread thread_;
};

Prediction failure_prediction(const GroundingSample& s, const std::string& model, ErrorCode code,
                              const std::string& note, int attempts) {
    Prediction p;
    p.sample_id = s.sample_id;
    p.model_name = model;
    p.parsed = ParsedTarget::make_failure(FailureReason::NoCoordinates);
    p.attempt_count = attempts;
    p.error = std::string(to_string(code));
    p.error_note = note;
    return p;
}

} // namespace

RunSummary run_benchmark(const DatasetManifest& dataset, const ChatClient& client, const PromptTemplate& tmpl,
                         const RunOptions& options) {
    const auto& cfg = client.config();
    if (!cfg.api_key_env.empty()) {
        const char* key = std::getenv(cfg.api_key_env.c_str());
        if (!key || !*key) {
            throw Error(ErrorCode::ConfigError, fmt::format("environment variable {} is not set", cfg.api_key_env));
        }
    }

    std::vector<const GroundingSample*> eligible;
    std::set<std::string> seen;
    for (const auto& s : dataset.samples) {
        if (s.direction != tmpl.direction) continue;
        if (!seen.insert(s.sample_id).second) {
            throw Error(ErrorCode::DuplicateSample, fmt::format("duplicate sample_id '{}'", s.sample_id));
        }
        eligible.push_back(&s);
    }
    std::sort(eligible.begin(), eligible.end(), [](auto* a, auto* b) { return a->sample_id < b->sample_id; });

    RunSummary summary;
    summary.eligible = static_cast<std::int64_t>(eligible.size());

    std::map<std::string, Prediction> results;
    if (!options.journal_path.empty()) {
        for (auto& [id, p] : load_journal(options.journal_path)) {
            if (seen.count(id)) results.emplace(id, std::move(p));
        }
    }
    summary.resumed = static_cast<std::int64_t>(results.size());

    std::vector<const GroundingSample*> pending;
    for (auto* s : eligible) {
        if (!results.count(s->sample_id)) pending.push_back(s);
    }

    std::mutex results_mu;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stopped{false};
    std::atomic<std::int64_t> sent{0};
    std::atomic<std::int64_t> unavailable{0};

    JournalWriter writer(options.journal_path, options.on_prediction);

    auto work = [&] {
        for (;;) {
            const auto idx = next.fetch_add(1);
            if (idx >= pending.size()) return;
            if (options.should_stop && options.should_stop()) {
                stopped = true;
                return;
            }
            const auto& s = *pending[idx];
            Prediction p;
            try {
                const auto* asset = dataset.find_asset(s.asset_id);
                if (!asset) throw Error(ErrorCode::AssetError, fmt::format("asset '{}' not in dataset", s.asset_id));
                const auto prompt = render_prompt(tmpl, s);
                ++sent;
                const auto q = query_model(client, prompt, *asset, dataset.resolve(*asset), s.sample_id);
                p.sample_id = s.sample_id;
                p.model_name = cfg.model_name;
                p.raw_text = q.text;
                p.attempt_count = q.attempts;
                p.latency_ms = q.latency_ms;
                p.parsed = s.direction == Direction::Forward ? parse_prediction(q.text, q.sent_dims)
                                                             : ParsedTarget::make_failure(FailureReason::NoCoordinates);
            } catch (const EndpointError& e) {
                if (e.code() == ErrorCode::EndpointUnavailable) ++unavailable;
                p = failure_prediction(s, cfg.model_name, e.code(), e.what(), e.attempts());
            } catch (const Error& e) {
                p = failure_prediction(s, cfg.model_name, e.code(), e.what(), 0);
            } catch (const std::exception& e) {
                p = failure_prediction(s, cfg.model_name, ErrorCode::IoError, e.what(), 0);
            }
            {
                std::lock_guard lock(results_mu);
                results[p.sample_id] = p;
            }
            writer.push(std::move(p));
        }
    };

    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.max_parallel_requests), pending.size());
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    writer.close();

    summary.new_requests = sent;
    summary.endpoint_failures = unavailable;
    summary.interrupted = stopped;
    summary.predictions.reserve(results.size());
    for (auto& [_, p] : results) summary.predictions.push_back(std::move(p));
    return summary;
}

} // namespace groundkit
