#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>

#include "groundkit/forge.hpp"
#include "groundkit/image.hpp"
#include "groundkit/util.hpp"

namespace groundkit::forge {

using nlohmann::json;
namespace fs = std::filesystem;

void FilterPolicy::validate() const {
    if (min_width_px < 1 || min_height_px < 1) throw Error(ErrorCode::ConfigError, "filter minima must be >= 1");
}

std::int64_t RunCounters::rejected_total() const {
    std::int64_t n = 0;
    for (const auto& [_, v] : rejected) n += v;
    return n;
}

json RunCounters::to_json() const {
    return {{"fetched", fetched}, {"accepted", accepted}, {"rejected", rejected}, {"deduped", deduped},
            {"regions", regions}, {"aligned", aligned},   {"dropped", dropped},   {"samples", samples}};
}

// ---------------------------------------------------------------- align

std::optional<std::string> clean_description(std::string_view raw) {
    std::string text;
    bool space = false;
    for (unsigned char c : raw) {
        if (std::isspace(c)) {
            space = !text.empty();
            continue;
        }
        if (space) text += ' ';
        space = false;
        text += static_cast<char>(c);
    }
    while (text.size() >= 2 && (text.front() == '"' || text.front() == '\'') && text.back() == text.front()) {
        text = text.substr(1, text.size() - 2);
    }
    if (text.empty()) return std::nullopt;

    std::string low = text;
    std::transform(low.begin(), low.end(), low.begin(), [](unsigned char c) { return std::tolower(c); });
    for (const char* refusal : {"i'm sorry", "i am sorry", "sorry,", "i cannot", "i can't", "i can not", "i'm unable",
                                "i am unable", "unable to", "as an ai"}) {
        if (low.rfind(refusal, 0) == 0) return std::nullopt;
    }

    if (text.size() > kMaxDescriptionChars) {
        auto cut = text.rfind(' ', kMaxDescriptionChars);
        if (cut == std::string::npos || cut == 0) cut = kMaxDescriptionChars;
        text.resize(cut);
        while (!text.empty() && text.back() == ' ') text.pop_back();
    }
    return text;
}

AlignResult align_descriptions(const cv::Mat& image, const std::vector<BoundingBox>& boxes, Aligner& aligner) {
    AlignResult r;
    for (const auto& b : boxes) {
        if (auto d = clean_description(aligner.describe(image, b))) {
            r.elements.push_back(make_element(std::move(*d), b));
        } else {
            ++r.dropped;
        }
    }
    return r;
}

std::vector<GroundingSample> synthesize_samples(const ScreenshotAsset& asset, const std::vector<Element>& elements) {
    std::vector<GroundingSample> out;
    for (const auto& e : elements) {
        const auto box = quantize_box(e.location);
        for (auto dir : {Direction::Forward, Direction::Reverse}) {
            GroundingSample s;
            s.sample_id = make_sample_id(asset.content_hash, box, dir);
            s.asset_id = asset.id;
            s.instruction = e.description;
            s.target = box;
            s.direction = dir;
            s.category = asset.app_category;
            out.push_back(std::move(s));
        }
    }
    return out;
}

// ---------------------------------------------------------------- acquire / filter

namespace {

Candidate fetch(const std::string& locator, AssetSource source, const std::string& category) {
    Candidate c;
    c.locator = locator;
    c.source = source;
    c.app_category = category;
    try {
        if (locator.rfind("http://", 0) == 0 || locator.rfind("https://", 0) == 0) {
            c.bytes = http_get_bytes(locator, 30.0);
        } else {
            c.bytes = read_file_bytes(locator);
        }
        c.content_hash = sha256_hex(c.bytes);
    } catch (const std::exception& e) {
        c.bytes.clear();
        c.fetch_error = e.what();
    }
    return c;
}

} // namespace

AcquireResult acquire(const std::vector<std::string>& apps, SearchProvider& search, SimilarImageProvider& similar,
                      int budget) {
    if (budget < 1) throw Error(ErrorCode::InvalidArgument, "budget must be >= 1");
    AcquireResult r;
    std::set<std::string> seen;
    auto room = [&] { return budget - static_cast<int>(r.candidates.size()); };

    for (const auto& app : apps) {
        if (room() <= 0) break;
        std::vector<std::string> hits;
        try {
            hits = search.search(app, room());
        } catch (const std::exception& e) {
            r.warnings.push_back(fmt::format("search for '{}' failed: {}", app, e.what()));
            continue;
        }
        for (const auto& loc : hits) {
            if (room() <= 0) break;
            if (!seen.insert(loc).second) continue;
            r.candidates.push_back(fetch(loc, AssetSource::Search, app));
            if (!r.candidates.back().fetch_error.empty()) {
                r.warnings.push_back(fmt::format("fetch {} failed: {}", loc, r.candidates.back().fetch_error));
            }
        }
    }

    const auto search_hits = r.candidates.size();
    for (std::size_t i = 0; i < search_hits && room() > 0; ++i) {
        const auto seed = r.candidates[i];
        if (!seed.fetch_error.empty()) continue;
        std::vector<std::string> more;
        try {
            more = similar.similar(seed, room());
        } catch (const std::exception& e) {
            r.warnings.push_back(fmt::format("similar-image expansion of {} failed: {}", seed.locator, e.what()));
            continue;
        }
        for (const auto& loc : more) {
            if (room() <= 0) break;
            if (!seen.insert(loc).second) continue;
            r.candidates.push_back(fetch(loc, AssetSource::SimilarExpansion, seed.app_category));
            if (!r.candidates.back().fetch_error.empty()) {
                r.warnings.push_back(fmt::format("fetch {} failed: {}", loc, r.candidates.back().fetch_error));
            }
        }
    }
    return r;
}

FilterOutcome filter_screenshot(const Candidate& candidate, const FilterPolicy& policy, ValidityChecker& checker) {
    FilterOutcome out;
    if (!candidate.fetch_error.empty() || candidate.bytes.empty()) {
        out.reason = candidate.fetch_error.empty() ? "corrupt" : "fetch-failed";
        return out;
    }
    cv::Mat img;
    try {
        img = cv::imdecode(candidate.bytes, cv::IMREAD_COLOR);
    } catch (const cv::Exception&) {
        img.release();
    }
    if (img.empty()) {
        out.reason = "corrupt";
        return out;
    }
    out.dims = {img.cols, img.rows};
    if (img.cols < policy.min_width_px || img.rows < policy.min_height_px) {
        out.reason = "low-resolution";
        return out;
    }
    if (policy.require_validity_check) {
        switch (checker.check(img, candidate.bytes)) {
        case Verdict::Yes: break;
        case Verdict::No: out.reason = "not-a-screenshot"; return out;
        case Verdict::Unavailable:
            if (policy.strict) {
                out.reason = "checker-unavailable";
                return out;
            }
            out.warning = fmt::format("validity checker unavailable for {}; accepted", candidate.locator);
            break;
        }
    }
    out.accepted = true;
    return out;
}

bool admitted(std::uint64_t seed, const std::string& content_hash, double probability) {
    if (probability >= 1.0) return true;
    if (probability <= 0.0) return false;
    const auto h = sha256_hex(fmt::format("admit|{}|{}", seed, content_hash));
    const auto bits = std::stoull(h.substr(0, 16), nullptr, 16);
    const double u = static_cast<double>(bits >> 11) * 0x1.0p-53;
    return u < probability;
}

// ---------------------------------------------------------------- config

void RunConfig::validate() const {
    if (run_id.empty()) throw Error(ErrorCode::ConfigError, "run_id is required");
    if (budget < 1) throw Error(ErrorCode::ConfigError, "budget must be >= 1");
    if (!(admission_probability >= 0.0 && admission_probability <= 1.0)) {
        throw Error(ErrorCode::ConfigError, "admission_probability must be within [0, 1]");
    }
    if (dedup_hamming < 0 || dedup_hamming > 64) throw Error(ErrorCode::ConfigError, "dedup_hamming must be within [0, 64]");
    if (output_dir.empty()) throw Error(ErrorCode::ConfigError, "output_dir is required");
    policy.validate();
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
    static const std::set<std::string> known{"run_id", "seed", "budget", "apps", "output_dir", "policy",
                                             "admission_probability", "dedup_hamming", "dataset_name", "providers"};
    RunConfig c;
    try {
        for (const auto& [k, _] : j.items()) {
            if (!known.count(k)) throw Error(ErrorCode::ConfigError, fmt::format("unknown run config key '{}'", k));
        }
        c.base_dir = base_dir;
        c.run_id = j.at("run_id").get<std::string>();
        c.seed = j.value("seed", std::uint64_t{0});
        c.budget = j.value("budget", c.budget);
        c.apps = j.value("apps", std::vector<std::string>{});
        fs::path out(j.value("output_dir", std::string("forge-out")));
        c.output_dir = out.is_absolute() ? out : base_dir / out;
        c.admission_probability = j.value("admission_probability", c.admission_probability);
        c.dedup_hamming = j.value("dedup_hamming", c.dedup_hamming);
        c.dataset_name = j.value("dataset_name", c.dataset_name);
        if (j.contains("policy")) {
            const auto& p = j.at("policy");
            c.policy.min_width_px = p.value("min_width_px", c.policy.min_width_px);
            c.policy.min_height_px = p.value("min_height_px", c.policy.min_height_px);
            c.policy.require_validity_check = p.value("require_validity_check", c.policy.require_validity_check);
            c.policy.validity_prompt = p.value("validity_prompt", c.policy.validity_prompt);
            c.policy.strict = p.value("strict", c.policy.strict);
        }
        c.providers = j.at("providers");
        auto& checker = c.providers["validity-checker"];
        if (checker.is_object() && !checker.contains("prompt")) checker["prompt"] = c.policy.validity_prompt;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, fmt::format("run config: {}", e.what()));
    }
    c.validate();
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const std::exception& e) {
        throw Error(ErrorCode::ConfigError, fmt::format("cannot read run config {}: {}", path.string(), e.what()));
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ConfigError, fmt::format("run config {} is not valid JSON: {}", path.string(), e.what()));
    }
    return from_json(j, path.has_parent_path() ? path.parent_path() : fs::path("."));
}

// ---------------------------------------------------------------- pipeline

namespace {

class StageJournal {
public:
    StageJournal(const fs::path& path, const RunConfig& cfg) : path_(path) {
        const json ident{{"run_id", cfg.run_id}, {"seed", cfg.seed}};
        std::ifstream in(path);
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            json rec;
            try {
                rec = json::parse(line);
            } catch (const json::exception&) {
                continue; // torn tail
            }
            if (first) {
                first = false;
                if (rec.value("key", "") != "run" || rec.at("payload") != ident) {
                    throw Error(ErrorCode::ConfigError,
                                fmt::format("{} belongs to a different run; use a fresh output_dir", path.string()));
                }
                continue;
            }
            entries_[rec.at("key").get<std::string>()] = rec.at("payload");
        }
        const bool fresh = first;
        out_.open(path, std::ios::app | std::ios::binary);
        if (!out_) throw Error(ErrorCode::IoError, fmt::format("cannot open {}", path.string()));
        if (fresh) append("run", "run", ident);
    }

    const json* find(const std::string& key) const {
        std::lock_guard lock(mu_);
        auto it = entries_.find(key);
        return it == entries_.end() ? nullptr : &it->second;
    }

    void append(const std::string& stage, const std::string& key, const json& payload) {
        std::lock_guard lock(mu_);
        out_ << json{{"stage", stage}, {"key", key}, {"payload", payload}}.dump() << '\n';
        out_.flush();
        entries_[key] = payload;
    }

private:
    fs::path path_;
    std::ofstream out_;
    mutable std::mutex mu_;
    std::map<std::string, json> entries_;
};

// Runs fn(i) for every index with at most `limit` threads; rethrows the first failure.
template <class Fn>
void parallel_for(std::size_t n, int limit, Fn fn) {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex fail_mu;
    std::atomic<bool> stop{false};
    auto worker = [&] {
        for (;;) {
            if (stop) return;
            const auto i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(fail_mu);
                if (!failure) failure = std::current_exception();
                stop = true;
            }
        }
    };
    const auto threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, limit)), n);
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
}

json box_json(const BoundingBox& b) {
    return json::array({b.x1(), b.y1(), b.x2(), b.y2()});
}

BoundingBox box_from_json(const json& j) {
    return BoundingBox::make(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>());
}

std::string box_key(const BoundingBox& b) {
    return fmt::format("{},{},{},{}", format6(b.x1()), format6(b.y1()), format6(b.x2()), format6(b.y2()));
}

std::string image_extension(const std::vector<std::uint8_t>& bytes) {
    static const std::uint8_t png[] = {0x89, 'P', 'N', 'G'};
    if (bytes.size() >= 4 && std::equal(png, png + 4, bytes.begin())) return ".png";
    if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return ".jpg";
    if (bytes.size() >= 2 && bytes[0] == 'B' && bytes[1] == 'M') return ".bmp";
    return ".img";
}

struct Accepted {
    std::size_t index; // acquisition order
    cv::Mat image;
    std::vector<BoundingBox> boxes;
    std::vector<Element> elements;
};

} // namespace

PipelineResult run_pipeline(const RunConfig& config, Providers& providers) {
    config.validate();
    if (!providers.search || !providers.similar || !providers.detector || !providers.aligner || !providers.checker) {
        throw Error(ErrorCode::ConfigError, "every provider kind must be bound");
    }
    const auto& out_dir = config.output_dir;
    fs::create_directories(out_dir / "cache");
    fs::create_directories(out_dir / "images");

    PipelineResult result;
    result.journal_path = out_dir / "journal.jsonl";
    result.manifest_path = out_dir / "manifest.jsonl";
    result.summary_path = out_dir / "run_summary.json";
    StageJournal journal(result.journal_path, config);
    auto& counters = result.counters;
    auto& warnings = result.warnings;

    // acquire
    std::vector<Candidate> candidates;
    if (const auto* done = journal.find("acquire")) {
        for (const auto& c : done->at("candidates")) {
            Candidate cand;
            cand.locator = c.at("locator").get<std::string>();
            cand.source = asset_source_from_string(c.at("source").get<std::string>());
            cand.app_category = c.at("category").get<std::string>();
            cand.fetch_error = c.at("fetch_error").get<std::string>();
            cand.content_hash = c.at("hash").get<std::string>();
            if (cand.fetch_error.empty()) cand.bytes = read_file_bytes(out_dir / "cache" / cand.content_hash);
            candidates.push_back(std::move(cand));
        }
        for (const auto& w : done->at("warnings")) warnings.push_back(w.get<std::string>());
    } else {
        auto acq = acquire(config.apps, *providers.search, *providers.similar, config.budget);
        json list = json::array();
        for (const auto& c : acq.candidates) {
            if (c.fetch_error.empty()) {
                const auto cached = out_dir / "cache" / c.content_hash;
                if (!fs::exists(cached)) {
                    write_file_atomic(cached, std::string_view(reinterpret_cast<const char*>(c.bytes.data()), c.bytes.size()));
                }
            }
            list.push_back({{"locator", c.locator},
                            {"source", to_string(c.source)},
                            {"category", c.app_category},
                            {"fetch_error", c.fetch_error},
                            {"hash", c.content_hash}});
        }
        journal.append("acquire", "acquire", {{"candidates", list}, {"warnings", acq.warnings}});
        candidates = std::move(acq.candidates);
        warnings.insert(warnings.end(), acq.warnings.begin(), acq.warnings.end());
    }
    counters.fetched = static_cast<std::int64_t>(candidates.size());

    // filter
    std::vector<FilterOutcome> outcomes(candidates.size());
    parallel_for(candidates.size(), providers.limit(ProviderKind::ValidityChecker), [&](std::size_t i) {
        const auto key = fmt::format("filter|{}|{}", i, candidates[i].content_hash);
        if (const auto* done = journal.find(key)) {
            outcomes[i].accepted = done->at("accepted").get<bool>();
            outcomes[i].reason = done->at("reason").get<std::string>();
            outcomes[i].warning = done->at("warning").get<std::string>();
            return;
        }
        outcomes[i] = filter_screenshot(candidates[i], config.policy, *providers.checker);
        journal.append("filter", key,
                       {{"accepted", outcomes[i].accepted}, {"reason", outcomes[i].reason}, {"warning", outcomes[i].warning}});
    });

    std::vector<Accepted> accepted;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        auto& o = outcomes[i];
        if (!o.warning.empty()) warnings.push_back(o.warning);
        if (o.accepted && !admitted(config.seed, candidates[i].content_hash, config.admission_probability)) {
            o.accepted = false;
            o.reason = "not-admitted";
        }
        if (!o.accepted) {
            ++counters.rejected[o.reason];
            continue;
        }
        ++counters.accepted;
        accepted.push_back({i, cv::imdecode(candidates[i].bytes, cv::IMREAD_COLOR), {}, {}});
    }

    // detect
    std::vector<std::string> detect_warnings(accepted.size());
    parallel_for(accepted.size(), providers.limit(ProviderKind::Detector), [&](std::size_t k) {
        auto& a = accepted[k];
        const auto key = "detect|" + candidates[a.index].content_hash;
        if (const auto* done = journal.find(key)) {
            for (const auto& b : done->at("boxes")) a.boxes.push_back(box_from_json(b));
            detect_warnings[k] = done->at("warning").get<std::string>();
            return;
        }
        auto r = detect_regions(a.image, *providers.detector);
        json boxes = json::array();
        for (const auto& b : r.boxes) boxes.push_back(box_json(b));
        journal.append("detect", key, {{"boxes", boxes}, {"warning", r.warning}});
        a.boxes = std::move(r.boxes);
        detect_warnings[k] = r.warning;
    });
    for (std::size_t k = 0; k < accepted.size(); ++k) {
        if (!detect_warnings[k].empty()) {
            warnings.push_back(fmt::format("{}: {}", candidates[accepted[k].index].locator, detect_warnings[k]));
        }
        counters.regions += static_cast<std::int64_t>(accepted[k].boxes.size());
    }

    // align
    struct Job {
        std::size_t asset;
        std::size_t box;
    };
    std::vector<Job> jobs;
    for (std::size_t k = 0; k < accepted.size(); ++k) {
        for (std::size_t b = 0; b < accepted[k].boxes.size(); ++b) jobs.push_back({k, b});
    }
    std::vector<std::optional<std::string>> descriptions(jobs.size());
    try {
        parallel_for(jobs.size(), providers.limit(ProviderKind::Aligner), [&](std::size_t j) {
            const auto& a = accepted[jobs[j].asset];
            const auto& box = a.boxes[jobs[j].box];
            const auto key = fmt::format("align|{}|{}", candidates[a.index].content_hash, box_key(box));
            if (const auto* done = journal.find(key)) {
                if (!done->at("description").is_null()) descriptions[j] = done->at("description").get<std::string>();
                return;
            }
            descriptions[j] = clean_description(providers.aligner->describe(a.image, box));
            journal.append("align", key, {{"description", descriptions[j] ? json(*descriptions[j]) : json(nullptr)}});
        });
    } catch (const EndpointError& e) {
        throw Error(ErrorCode::EndpointUnavailable,
                    fmt::format("aligner unavailable ({}); completed stages are journaled, rerun to resume", e.what()));
    }
    std::int64_t total_aligned = 0;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        auto& a = accepted[jobs[j].asset];
        if (descriptions[j]) {
            a.elements.push_back(make_element(*descriptions[j], a.boxes[jobs[j].box]));
            ++total_aligned;
        } else {
            ++counters.dropped;
        }
    }

    // dedup
    std::vector<std::uint64_t> hashes;
    for (const auto& a : accepted) hashes.push_back(image::difference_hash(a.image));
    const auto survivors = dedup_hashes(hashes, config.dedup_hamming);
    counters.deduped = static_cast<std::int64_t>(accepted.size() - survivors.size());

    // synthesize
    DatasetManifest& m = result.manifest;
    m.name = config.dataset_name;
    m.provenance = {config.run_id, config.seed, kToolVersion};
    m.base_dir = out_dir;
    for (auto k : survivors) {
        const auto& a = accepted[k];
        const auto& c = candidates[a.index];
        const auto rel = "images/" + c.content_hash.substr(0, 16) + image_extension(c.bytes);
        if (!fs::exists(out_dir / rel)) {
            write_file_atomic(out_dir / rel, std::string_view(reinterpret_cast<const char*>(c.bytes.data()), c.bytes.size()));
        }
        ScreenshotAsset asset;
        asset.id = asset_id_for_hash(c.content_hash);
        asset.image_path = rel;
        asset.width_px = a.image.cols;
        asset.height_px = a.image.rows;
        asset.content_hash = c.content_hash;
        asset.source = c.source;
        asset.app_category = c.app_category;
        auto samples = synthesize_samples(asset, a.elements);
        counters.aligned += static_cast<std::int64_t>(a.elements.size());
        m.samples.insert(m.samples.end(), samples.begin(), samples.end());
        m.assets.push_back(std::move(asset));
    }
    counters.samples = static_cast<std::int64_t>(m.samples.size());
    write_manifest(m, result.manifest_path);

    json summary{{"run_id", config.run_id},
                 {"seed", config.seed},
                 {"tool_version", kToolVersion},
                 {"counters", counters.to_json()},
                 {"aligned_before_dedup", total_aligned},
                 {"warnings", warnings}};
    write_file_atomic(result.summary_path, summary.dump(2) + "\n");
    return result;
}

} // namespace groundkit::forge
