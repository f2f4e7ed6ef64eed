#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

namespace httplib {
class Server;
}

namespace groundkit {

struct MockReply {
    std::string reply;
    int fail_first = 0;     // answer the first N attempts with fail_status
    int fail_status = 500;
    int delay_ms = 0;
    bool always_fail = false;
};

struct MockServerOptions {
    std::string host = "127.0.0.1";
    int port = 0; // 0 picks a free port
    std::string default_reply = "I cannot determine the location.";
    int delay_ms = 0;
    std::string required_api_key; // when set, requests without this bearer token get 401
    int threads = 32;
};

struct MockGauge {
    int in_flight = 0;
    int max_in_flight = 0;
    std::int64_t requests = 0;

    nlohmann::json to_json() const;
};

/// Replays canned replies over the chat-completion protocol. Replies are
/// keyed by the X-Request-Id header, falling back to the prompt text and then
/// to the default reply. GET /gauge reports concurrency; POST /gauge/reset
/// clears it.
class MockModelServer {
public:
    explicit MockModelServer(std::map<std::string, MockReply> fixtures, MockServerOptions options = {});
    ~MockModelServer();
    MockModelServer(const MockModelServer&) = delete;
    MockModelServer& operator=(const MockModelServer&) = delete;

    void start();
    void stop();
    // Blocks; for the standalone tool.
    void run();

    int port() const { return port_; }
    std::string base_url() const;
    MockGauge gauge() const;
    void reset_gauge();
    int attempts_for(const std::string& key) const;
    std::string last_authorization() const;

    // One JSON object per line: {"id", "reply", "fail_first", "fail_status", "delay_ms", "always_fail"}.
    static std::map<std::string, MockReply> load_fixtures(const std::filesystem::path& path);

private:
    void bind();

    std::map<std::string, MockReply> fixtures_;
    MockServerOptions options_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = 0;

    mutable std::mutex mu_;
    MockGauge gauge_;
    std::map<std::string, int> attempts_;
    std::string last_auth_;
};

} // namespace groundkit
