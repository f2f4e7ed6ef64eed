#pragma once

#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "groundkit/error.hpp"

namespace groundkit {

/// Where and how to reach a chat-completion endpoint. The API key itself is
/// never stored here, only the name of the environment variable holding it.
struct EndpointConfig {
    std::string base_url = "http://127.0.0.1:8000/v1";
    std::string model_name = "default";
    std::string api_key_env;
    double timeout_seconds = 60.0;
    int max_retries = 3;
    int max_parallel_requests = 4;
    double temperature = 0.0;
    std::chrono::milliseconds backoff_initial{1000};
    // 0 disables; otherwise images are downscaled so the longest side fits.
    int resize_longest_side = 0;

    void validate() const;
};

struct ChatImage {
    std::string mime_type = "image/png";
    std::vector<std::uint8_t> bytes;
};

struct ChatReply {
    std::string text;
    int attempts = 0;
    double latency_ms = 0.0;
};

// Carries the number of attempts made before giving up.
class EndpointError : public Error {
public:
    EndpointError(ErrorCode code, const std::string& message, int attempts)
        : Error(code, message), attempts_(attempts) {}
    int attempts() const noexcept { return attempts_; }

private:
    int attempts_;
};

/// One logical chat request: a user message with text plus attached images.
/// Transport failures, 408, 429 and 5xx are retried with exponential backoff
/// and full jitter; other statuses and unreadable bodies are rejected at once.
class ChatClient {
public:
    explicit ChatClient(EndpointConfig config);

    ChatReply complete(const std::string& prompt, std::span<const ChatImage> images,
                       const std::string& request_id = {}) const;

    const EndpointConfig& config() const { return config_; }

private:
    EndpointConfig config_;
    std::string origin_;      // scheme://host:port
    std::string path_prefix_; // e.g. "/v1"
};

struct HttpTarget {
    std::string origin;
    std::string path;
};
HttpTarget split_url(const std::string& url);

// Plain GET used by providers that hand back image URLs.
std::vector<std::uint8_t> http_get_bytes(const std::string& url, double timeout_seconds);

} // namespace groundkit
