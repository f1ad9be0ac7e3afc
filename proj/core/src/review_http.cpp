#include "medforge/review_http.hpp"

#include <cstdlib>

#include <httplib.h>

namespace medforge::review {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, json{{"error", message}});
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        return json::parse(req.body);
    } catch (const json::exception& e) {
        throw ReviewError(ReviewError::Kind::BadRequest, std::string("invalid JSON body: ") + e.what());
    }
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
        try {
            fn(req, res);
        } catch (const ReviewError& e) {
            send_error(res, e.kind() == ReviewError::Kind::NotFound ? 404 : 400, e.what());
        } catch (const RecordError& e) {
            send_error(res, 400, e.what());
        } catch (const json::exception& e) {
            send_error(res, 400, e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    };
}

}  // namespace

struct ReviewServer::Impl {
    ReviewService& service;
    std::optional<std::string> token;
    httplib::Server server;

    Impl(ReviewService& s, std::optional<std::string> t) : service(s), token(std::move(t)) { routes(); }

    void routes() {
        server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
            if (!token || req.path.rfind("/api/", 0) != 0) return httplib::Server::HandlerResponse::Unhandled;
            if (req.get_header_value("Authorization") == "Bearer " + *token) {
                return httplib::Server::HandlerResponse::Unhandled;
            }
            send_error(res, 401, "missing or invalid bearer token");
            return httplib::Server::HandlerResponse::Handled;
        });

        server.Post("/api/batches", guarded([this](const httplib::Request& req, httplib::Response& res) {
            json body = parse_body(req);
            if (!body.contains("size")) throw ReviewError(ReviewError::Kind::BadRequest, "size is required");
            auto size = body.at("size").get<long long>();
            if (size <= 0) throw ReviewError(ReviewError::Kind::BadRequest, "batch size must be positive");
            ReviewBatch b = service.create_batch(static_cast<std::size_t>(size), body.value("seed", std::uint64_t{0}));
            send_json(res, 201, json(b));
        }));

        server.Get("/api/batches/:id/next", guarded([this](const httplib::Request& req, httplib::Response& res) {
            std::string annotator = req.get_param_value("annotator");
            auto item = service.next_item(req.path_params.at("id"), annotator);
            if (item) {
                send_json(res, 200, json{{"done", false}, {"item", *item}});
            } else {
                send_json(res, 200, json{{"done", true}});
            }
        }));

        server.Get("/api/pairs/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 200, service.pair_payload(req.path_params.at("id")));
        }));

        server.Post("/api/pairs/:id/verdict", guarded([this](const httplib::Request& req, httplib::Response& res) {
            json body = parse_body(req);
            Verdict v;
            v.pair_id = req.path_params.at("id");
            v.decision = decision_from_string(body.at("decision").get<std::string>());
            v.issue_tags = body.value("issue_tags", std::vector<std::string>{});
            v.annotator = body.value("annotator", "");
            v.timestamp_ms = body.value("timestamp_ms", std::int64_t{0});
            auto ticket = service.submit_verdict(v);
            json ack{{"ok", true}};
            if (ticket) ack["ticket"] = *ticket;
            send_json(res, 201, ack);
        }));

        server.Get("/api/stats", guarded([this](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, service.stats_json());
        }));

        server.Get("/api/tickets", guarded([this](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, json{{"tickets", service.tickets()}});
        }));

        server.Post("/api/reprocess/run", guarded([this](const httplib::Request&, httplib::Response& res) {
            ReprocessSummary s = service.reprocess_all();
            send_json(res, 200,
                      json{{"processed", s.processed}, {"done", s.done}, {"dropped", s.dropped}, {"retryable", s.retryable}});
        }));

        server.Get("/img/:digest", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto [bytes, mime] = service.image(req.path_params.at("digest"));
            res.status = 200;
            res.set_content(bytes, mime);
        }));
    }
};

ReviewServer::ReviewServer(ReviewService& service, std::optional<std::string> token)
    : impl_(std::make_unique<Impl>(service, std::move(token))) {}

ReviewServer::~ReviewServer() { stop(); }

bool ReviewServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int ReviewServer::bind_to_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool ReviewServer::listen_after_bind() { return impl_->server.listen_after_bind(); }

void ReviewServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

void ReviewServer::stop() {
    if (impl_) impl_->server.stop();
}

std::optional<std::string> token_from_env() {
    const char* t = std::getenv("MEDFORGE_REVIEW_TOKEN");
    if (t == nullptr || *t == '\0') return std::nullopt;
    return std::string(t);
}

}  // namespace medforge::review
