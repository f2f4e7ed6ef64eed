// Replay server for OpenAI-style chat completions, keyed by X-Request-Id.
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "groundkit/error.hpp"
#include "groundkit/mock_server.hpp"

namespace {
std::atomic<bool> g_stop{false};
void on_signal(int) {
    g_stop = true;
}
} // namespace

int main(int argc, char** argv) {
    CLI::App app{"groundkit-mock: canned-reply chat completion server for offline runs", "groundkit-mock"};
    std::string fixtures;
    std::string api_key_env;
    groundkit::MockServerOptions opts;
    app.add_option("--fixtures", fixtures, "JSONL of {id, reply, fail_first, fail_status, delay_ms, always_fail}");
    app.add_option("--host", opts.host, "Bind address")->capture_default_str();
    app.add_option("--port", opts.port, "Bind port (0 picks a free one)")->capture_default_str();
    app.add_option("--default-reply", opts.default_reply, "Reply for unknown request ids")->capture_default_str();
    app.add_option("--delay-ms", opts.delay_ms, "Delay added to every reply")->capture_default_str();
    app.add_option("--api-key-env", api_key_env, "Env var with the bearer token to require");
    app.add_option("--threads", opts.threads, "Worker threads")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    try {
        if (!api_key_env.empty()) {
            const char* key = std::getenv(api_key_env.c_str());
            if (!key || !*key) {
                std::cerr << api_key_env << " is not set\n";
                return 4;
            }
            opts.required_api_key = key;
        }
        auto replies = fixtures.empty() ? std::map<std::string, groundkit::MockReply>{}
                                        : groundkit::MockModelServer::load_fixtures(fixtures);
        groundkit::MockModelServer server(std::move(replies), opts);
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        server.start();
        std::cout << server.base_url() << std::endl;
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        server.stop();
    } catch (const groundkit::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
