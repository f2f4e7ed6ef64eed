#include "groundkit/mock_server.hpp"

#include <chrono>
#include <fstream>

#include <fmt/format.h>
#include <httplib.h>

#include "groundkit/error.hpp"

namespace groundkit {

using nlohmann::json;

json MockGauge::to_json() const {
    return {{"in_flight", in_flight}, {"max_in_flight", max_in_flight}, {"requests", requests}};
}

std::map<std::string, MockReply> MockModelServer::load_fixtures(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, fmt::format("cannot open fixtures {}", path.string()));
    std::map<std::string, MockReply> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = json::parse(line);
            MockReply r;
            r.reply = j.value("reply", "");
            r.fail_first = j.value("fail_first", 0);
            r.fail_status = j.value("fail_status", 500);
            r.delay_ms = j.value("delay_ms", 0);
            r.always_fail = j.value("always_fail", false);
            out[j.at("id").get<std::string>()] = std::move(r);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::ParseError, fmt::format("fixtures line {}: {}", line_no, e.what()));
        }
    }
    return out;
}

MockModelServer::MockModelServer(std::map<std::string, MockReply> fixtures, MockServerOptions options)
    : fixtures_(std::move(fixtures)), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
    const int threads = options_.threads;
    server_->new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<size_t>(threads)); };

    auto chat = [this](const httplib::Request& req, httplib::Response& res) {
        struct InFlight {
            MockModelServer* self;
            explicit InFlight(MockModelServer* s) : self(s) {
                std::lock_guard lock(self->mu_);
                ++self->gauge_.requests;
                ++self->gauge_.in_flight;
                self->gauge_.max_in_flight = std::max(self->gauge_.max_in_flight, self->gauge_.in_flight);
            }
            ~InFlight() {
                std::lock_guard lock(self->mu_);
                --self->gauge_.in_flight;
            }
        } guard(this);

        const auto auth = req.get_header_value("Authorization");
        {
            std::lock_guard lock(mu_);
            last_auth_ = auth;
        }
        if (!options_.required_api_key.empty() && auth != "Bearer " + options_.required_api_key) {
            res.status = 401;
            res.set_content(R"({"error":{"message":"invalid api key"}})", "application/json");
            return;
        }

        std::string prompt;
        try {
            const auto body = json::parse(req.body);
            for (const auto& part : body.at("messages").at(0).at("content")) {
                if (part.value("type", "") == "text") prompt += part.value("text", "");
            }
        } catch (const json::exception&) {
            res.status = 400;
            res.set_content(R"({"error":{"message":"bad request body"}})", "application/json");
            return;
        }

        std::string key = req.get_header_value("X-Request-Id");
        const MockReply* fixture = nullptr;
        if (auto it = fixtures_.find(key); it != fixtures_.end()) {
            fixture = &it->second;
        } else if (auto jt = fixtures_.find(prompt); jt != fixtures_.end()) {
            key = prompt;
            fixture = &jt->second;
        }
        int attempt = 0;
        {
            std::lock_guard lock(mu_);
            attempt = ++attempts_[key];
        }
        const int delay = options_.delay_ms + (fixture ? fixture->delay_ms : 0);
        if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));

        if (fixture && (fixture->always_fail || attempt <= fixture->fail_first)) {
            res.status = fixture->fail_status;
            res.set_content(fmt::format(R"({{"error":{{"message":"injected {}"}}}})", fixture->fail_status),
                            "application/json");
            return;
        }
        const json reply{{"id", "mock-" + std::to_string(attempt)},
                         {"object", "chat.completion"},
                         {"choices", json::array({{{"index", 0},
                                                   {"finish_reason", "stop"},
                                                   {"message", {{"role", "assistant"},
                                                                {"content", fixture ? fixture->reply
                                                                                    : options_.default_reply}}}}})}};
        res.set_content(reply.dump(), "application/json");
    };
    server_->Post("/v1/chat/completions", chat);
    server_->Post("/chat/completions", chat);
    server_->Get("/gauge", [this](const httplib::Request&, httplib::Response& res) {
        res.set_content(gauge().to_json().dump(), "application/json");
    });
    server_->Post("/gauge/reset", [this](const httplib::Request&, httplib::Response& res) {
        reset_gauge();
        res.set_content("{}", "application/json");
    });
}

MockModelServer::~MockModelServer() {
    stop();
}

void MockModelServer::bind() {
    if (options_.port == 0) {
        port_ = server_->bind_to_any_port(options_.host);
    } else {
        port_ = server_->bind_to_port(options_.host, options_.port) ? options_.port : -1;
    }
    if (port_ <= 0) {
        throw Error(ErrorCode::IoError, fmt::format("mock server cannot bind {}:{}", options_.host, options_.port));
    }
}

void MockModelServer::start() {
    bind();
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
}

void MockModelServer::run() {
    bind();
    server_->listen_after_bind();
}

void MockModelServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

std::string MockModelServer::base_url() const {
    return fmt::format("http://{}:{}/v1", options_.host, port_);
}

MockGauge MockModelServer::gauge() const {
    std::lock_guard lock(mu_);
    return gauge_;
}

void MockModelServer::reset_gauge() {
    std::lock_guard lock(mu_);
    gauge_ = MockGauge{gauge_.in_flight, gauge_.in_flight, 0};
    attempts_.clear();
}

int MockModelServer::attempts_for(const std::string& key) const {
    std::lock_guard lock(mu_);
    auto it = attempts_.find(key);
    return it == attempts_.end() ? 0 : it->second;
}

std::string MockModelServer::last_authorization() const {
    std::lock_guard lock(mu_);
    return last_auth_;
}

} // namespace groundkit
