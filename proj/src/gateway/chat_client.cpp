#include "groundkit/chat_client.hpp"

#include <cmath>
#include <cstdlib>
#include <random>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "groundkit/util.hpp"

namespace groundkit {

using nlohmann::json;

void EndpointConfig::validate() const {
    if (max_parallel_requests < 1) throw Error(ErrorCode::ConfigError, "max_parallel_requests must be >= 1");
    if (!(timeout_seconds > 0.0)) throw Error(ErrorCode::ConfigError, "timeout must be > 0");
    if (max_retries < 0) throw Error(ErrorCode::ConfigError, "max_retries must be >= 0");
    if (backoff_initial.count() < 0) throw Error(ErrorCode::ConfigError, "backoff must be >= 0");
    if (resize_longest_side < 0) throw Error(ErrorCode::ConfigError, "resize_longest_side must be >= 0");
    if (base_url.rfind("http://", 0) != 0 && base_url.rfind("https://", 0) != 0) {
        throw Error(ErrorCode::ConfigError, fmt::format("base_url '{}' must start with http:// or https://", base_url));
    }
}

HttpTarget split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error(ErrorCode::ConfigError, fmt::format("bad url '{}'", url));
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, ""};
    return {url.substr(0, path_start), url.substr(path_start)};
}

namespace {

bool retryable_status(int status) {
    return status == 408 || status == 429 || status >= 500;
}

std::string extract_content(const json& body) {
    const auto& content = body.at("choices").at(0).at("message").at("content");
    if (content.is_string()) return content.get<std::string>();
    if (content.is_array()) {
        std::string out;
        for (const auto& part : content) {
            if (part.value("type", "") == "text") out += part.value("text", "");
        }
        return out;
    }
    if (content.is_null()) return {};
    throw Error(ErrorCode::RequestRejected, "unsupported message content type");
}

void configure(httplib::Client& cli, double timeout_seconds) {
    const auto secs = static_cast<time_t>(timeout_seconds);
    const auto usecs = static_cast<time_t>((timeout_seconds - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
}

} // namespace

ChatClient::ChatClient(EndpointConfig config) : config_(std::move(config)) {
    config_.validate();
    auto target = split_url(config_.base_url);
    origin_ = std::move(target.origin);
    path_prefix_ = std::move(target.path);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

ChatReply ChatClient::complete(const std::string& prompt, std::span<const ChatImage> images,
                               const std::string& request_id) const {
    json content = json::array();
    content.push_back({{"type", "text"}, {"text", prompt}});
    for (const auto& img : images) {
        content.push_back({{"type", "image_url"},
                           {"image_url", {{"url", fmt::format("data:{};base64,{}", img.mime_type, base64_encode(img.bytes))}}}});
    }
    const json body{{"model", config_.model_name},
                    {"temperature", config_.temperature},
                    {"stream", false},
                    {"messages", json::array({{{"role", "user"}, {"content", content}}})}};
    const auto payload = body.dump();

    httplib::Headers headers;
    if (!request_id.empty()) headers.emplace("X-Request-Id", request_id);
    if (!config_.api_key_env.empty()) {
        const char* key = std::getenv(config_.api_key_env.c_str());
        if (!key || !*key) {
            throw EndpointError(ErrorCode::ConfigError,
                                fmt::format("environment variable {} is not set", config_.api_key_env), 0);
        }
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    thread_local std::mt19937_64 jitter{std::random_device{}()};
    const auto started = std::chrono::steady_clock::now();
    const std::string path = path_prefix_ + "/chat/completions";
    std::string last_error;
    const int max_attempts = config_.max_retries + 1;

    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        if (attempt > 1) {
            const double cap = static_cast<double>(config_.backoff_initial.count()) * std::pow(2.0, attempt - 2);
            std::uniform_real_distribution<double> wait(0.0, cap);
            std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(wait(jitter)));
        }
        httplib::Client cli(origin_);
        configure(cli, config_.timeout_seconds);
        auto res = cli.Post(path, headers, payload, "application/json");
        if (!res) {
            last_error = fmt::format("transport error: {}", httplib::to_string(res.error()));
            continue;
        }
        if (res->status != 200) {
            if (retryable_status(res->status)) {
                last_error = fmt::format("HTTP {}", res->status);
                continue;
            }
            throw EndpointError(ErrorCode::RequestRejected, fmt::format("HTTP {}: {}", res->status, res->body.substr(0, 200)),
                                attempt);
        }
        try {
            ChatReply reply;
            reply.text = extract_content(json::parse(res->body));
            reply.attempts = attempt;
            reply.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
            return reply;
        } catch (const json::exception& e) {
            throw EndpointError(ErrorCode::RequestRejected, fmt::format("malformed completion body: {}", e.what()),
                                attempt);
        }
    }
    throw EndpointError(ErrorCode::EndpointUnavailable,
                        fmt::format("endpoint unavailable after {} attempts ({})", max_attempts, last_error), max_attempts);
}

std::vector<std::uint8_t> http_get_bytes(const std::string& url, double timeout_seconds) {
    const auto target = split_url(url);
    httplib::Client cli(target.origin);
    configure(cli, timeout_seconds);
    cli.set_follow_location(true);
    auto res = cli.Get(target.path.empty() ? "/" : target.path);
    if (!res) {
        throw Error(ErrorCode::EndpointUnavailable, fmt::format("GET {} failed: {}", url, httplib::to_string(res.error())));
    }
    if (res->status != 200) throw Error(ErrorCode::RequestRejected, fmt::format("GET {} returned {}", url, res->status));
    return {res->body.begin(), res->body.end()};
}

} // namespace groundkit
