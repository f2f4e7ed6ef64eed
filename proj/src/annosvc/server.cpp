#include <fmt/format.h>
#include <httplib.h>

#include "groundkit/annosvc.hpp"
#include "groundkit/util.hpp"

namespace groundkit::annosvc {

using nlohmann::json;

namespace {

int status_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::InvalidGeometry:
    case ErrorCode::InvalidArgument: return 422;
    case ErrorCode::EmptyExport: return 409;
    case ErrorCode::ParseError: return 400;
    default: return 500;
    }
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
    send_json(res, status, {{"error", code}, {"message", message}});
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        auto j = json::parse(req.body);
        if (!j.is_object()) throw Error(ErrorCode::ParseError, "request body must be a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ParseError, fmt::format("request body is not JSON: {}", e.what()));
    }
}

// Wraps a handler so domain errors map to status + machine-readable code.
template <class Fn>
httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
        try {
            fn(req, res);
        } catch (const Error& e) {
            send_error(res, status_for(e.code()), to_string(e.code()), e.what());
        } catch (const json::exception& e) {
            send_error(res, 400, "parse-error", e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, "internal", e.what());
        }
    };
}

} // namespace

AnnotationServer::AnnotationServer(AnnotationStore& store, ServerOptions options)
    : store_(store), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
    const int threads = options_.threads;
    server_->new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<size_t>(threads)); };
    auto& srv = *server_;

    srv.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        if (req.method == "OPTIONS") {
            res.status = 204;
            return httplib::Server::HandlerResponse::Handled;
        }
        if (!options_.token.empty() && req.get_header_value("Authorization") != "Bearer " + options_.token) {
            send_error(res, 401, "unauthorized", "missing or wrong bearer token");
            return httplib::Server::HandlerResponse::Handled;
        }
        return httplib::Server::HandlerResponse::Unhandled;
    });

    srv.Get("/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"ok", true}}); });

    srv.Get("/images", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto filter_text = req.has_param("filter") ? req.get_param_value("filter") : "unannotated";
        const auto filter = image_filter_from_string(filter_text);
        std::size_t limit = 50;
        if (req.has_param("limit")) {
            try {
                limit = static_cast<std::size_t>(std::stoul(req.get_param_value("limit")));
            } catch (const std::exception&) {
                throw Error(ErrorCode::InvalidArgument, "limit must be a positive integer");
            }
        }
        const auto page = store_.list_images(filter, req.get_param_value("cursor"), limit);
        json items = json::array();
        for (const auto& s : page.items) items.push_back(s.to_json());
        send_json(res, 200,
                  {{"filter", filter_text},
                   {"items", items},
                   {"next_cursor", page.next_cursor ? json(*page.next_cursor) : json(nullptr)}});
    }));

    srv.Get(R"(/images/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto id = req.matches[1].str();
        json samples = json::array();
        for (const auto& s : store_.samples_for(id)) samples.push_back(sample_to_json(s));
        send_json(res, 200, {{"asset", store_.summary(id).to_json()}, {"samples", samples}});
    }));

    srv.Get(R"(/images/([^/]+)/file)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto id = req.matches[1].str();
        const auto path = store_.image_path(id);
        if (store_.summary(id).flagged) throw Error(ErrorCode::NotFound, fmt::format("asset '{}' is privacy-flagged", id));
        std::vector<std::uint8_t> bytes;
        try {
            bytes = read_file_bytes(path);
        } catch (const std::exception&) {
            throw Error(ErrorCode::NotFound, fmt::format("image for asset '{}' is missing", id));
        }
        res.set_content(std::string(bytes.begin(), bytes.end()), image_mime_type(path));
    }));

    srv.Post(R"(/images/([^/]+)/annotations)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        AnnotationDraft d;
        d.asset_id = req.matches[1].str();
        if (!body.contains("box")) throw Error(ErrorCode::InvalidArgument, "box is required");
        const auto& box = body.at("box");
        if (!box.is_array() || box.size() != 4 ||
            !std::all_of(box.begin(), box.end(), [](const json& v) { return v.is_number_integer(); })) {
            throw Error(ErrorCode::InvalidArgument, "box must be four integer pixel coordinates [x1, y1, x2, y2]");
        }
        d.box = {box[0].get<std::int64_t>(), box[1].get<std::int64_t>(), box[2].get<std::int64_t>(), box[3].get<std::int64_t>()};
        d.description = body.value("description", "");
        d.category = body.value("category", "");
        d.annotator_id = body.value("annotator_id", "");
        const auto r = store_.submit(d);
        send_json(res, r.created ? 201 : 200, {{"sample", sample_to_json(r.sample)}, {"warnings", r.warnings}});
    }));

    srv.Post(R"(/images/([^/]+)/privacy-flag)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        const auto ack = store_.flag_privacy(req.matches[1].str(), body.value("reason", ""));
        send_json(res, 200, {{"asset_id", ack.asset_id}, {"flagged", true}, {"already_flagged", ack.already_flagged}});
    }));

    srv.Post(R"(/admin/images/([^/]+)/unflag)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        store_.unflag(req.matches[1].str());
        send_json(res, 200, {{"asset_id", req.matches[1].str()}, {"flagged", false}});
    }));

    srv.Get("/export", guarded([this](const httplib::Request& req, httplib::Response& res) {
        if (!req.has_param("name")) throw Error(ErrorCode::InvalidArgument, "name is required");
        const auto r = store_.export_manifest(req.get_param_value("name"));
        send_json(res, 200,
                  {{"path", r.path.string()},
                   {"assets", r.assets},
                   {"samples", r.samples},
                   {"manifest", read_text_file(r.path)}});
    }));
}

AnnotationServer::~AnnotationServer() {
    stop();
}

void AnnotationServer::bind() {
    if (options_.port == 0) {
        port_ = server_->bind_to_any_port(options_.host);
    } else {
        port_ = server_->bind_to_port(options_.host, options_.port) ? options_.port : -1;
    }
    if (port_ <= 0) throw Error(ErrorCode::IoError, fmt::format("cannot bind {}:{}", options_.host, options_.port));
}

void AnnotationServer::start() {
    bind();
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
}

void AnnotationServer::run() {
    bind();
    server_->listen_after_bind();
}

void AnnotationServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

std::string AnnotationServer::base_url() const {
    return fmt::format("http://{}:{}", options_.host, port_);
}

} // namespace groundkit::annosvc
