#include "esceval/annosvc.hpp"

#include "httplib.h"

namespace esceval::annosvc {

using nlohmann::json;

namespace {

json dialogue_only(const sim::Transcript &t) {
    json turns = json::array();
    for (const auto &turn : t.turns)
        turns.push_back({{"speaker", sim::to_string(turn.speaker)}, {"text", turn.text}});
    return {{"turns", std::move(turns)}};
}

void reply(httplib::Response &res, int status, const json &body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response &res, int status, const std::string &what, const std::string &field = {}) {
    json body = {{"error", what}};
    if (!field.empty())
        body["field"] = field;
    reply(res, status, body);
}

// Runs a handler and maps library errors onto HTTP statuses.
template <typename Fn>
void guarded(httplib::Response &res, Fn &&fn) {
    try {
        fn();
    } catch (const ServiceError &ex) {
        reply_error(res, ex.status(), ex.what(), ex.field());
    } catch (const ValidationError &ex) {
        reply_error(res, 422, ex.what(), ex.field());
    } catch (const json::exception &ex) {
        reply_error(res, 400, std::string("malformed request body: ") + ex.what());
    } catch (const std::exception &ex) {
        reply_error(res, 500, ex.what());
    }
}

json parse_body(const httplib::Request &req) {
    auto body = json::parse(req.body);
    if (!body.is_object())
        throw ServiceError(400, "request body must be a JSON object");
    return body;
}

std::string required_param(const httplib::Request &req, const char *name) {
    if (!req.has_param(name) || req.get_param_value(name).empty())
        throw ServiceError(400, std::string("missing query parameter '") + name + "'", name);
    return req.get_param_value(name);
}

} // namespace

struct Server::Impl {
    Coordinator &coordinator;
    ServerConfig config;
    httplib::Server http;

    Impl(Coordinator &c, ServerConfig cfg) : coordinator(c), config(std::move(cfg)) {}

    void routes() {
        http.set_default_headers({{"Access-Control-Allow-Origin", config.cors_origin},
                                  {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                  {"Access-Control-Allow-Headers", "Content-Type"}});
        http.Options(R"(.*)", [](const httplib::Request &, httplib::Response &res) { res.status = 204; });

        http.Get("/tasks/next", [this](const httplib::Request &req, httplib::Response &res) {
            guarded(res, [&] {
                const auto annotator = required_param(req, "annotator");
                const auto kind =
                    rubric::parse_rubric(req.has_param("rubric") ? req.get_param_value("rubric") : "eval7");
                auto lease = coordinator.next_task(annotator, kind);
                if (!lease) {
                    res.status = 204;
                    return;
                }
                json body = to_json(*lease);
                body["transcript"] = sim::to_json(*coordinator.transcript(lease->transcript_id));
                body["rubric_spec"] = rubric::spec_to_json(rubric::spec(kind));
                reply(res, 200, body);
            });
        });

        http.Post("/ratings", [this](const httplib::Request &req, httplib::Response &res) {
            guarded(res, [&] {
                auto body = parse_body(req);
                if (!body.contains("lease_id") || !body["lease_id"].is_string())
                    throw ServiceError(400, "missing lease_id", "lease_id");
                if (!body.contains("record"))
                    throw ServiceError(400, "missing record", "record");
                auto &rec = body["record"];
                // The client may leave server-assigned fields out.
                for (const char *k : {"id", "timestamp", "transcript_id", "annotator_id"})
                    if (!rec.contains(k))
                        rec[k] = "";
                auto record = rubric::annotation_from_json(rec);
                auto ack = coordinator.submit_rating(body["lease_id"].get<std::string>(), std::move(record));
                reply(res, 200, {{"id", ack.record_id}, {"status", ack.duplicate ? "duplicate" : "stored"}});
            });
        });

        http.Get("/pairs/next", [this](const httplib::Request &req, httplib::Response &res) {
            guarded(res, [&] {
                auto lease = coordinator.next_pair(required_param(req, "annotator"));
                if (!lease) {
                    res.status = 204;
                    return;
                }
                reply(res, 200,
                      {{"lease_id", lease->lease_id},
                       {"lease_expiry", format_utc(lease->expiry)},
                       {"criterion", rubric::kPairwiseCriterion},
                       {"left", dialogue_only(*coordinator.transcript(lease->display_left))},
                       {"right", dialogue_only(*coordinator.transcript(lease->display_right))}});
            });
        });

        http.Post("/pairwise", [this](const httplib::Request &req, httplib::Response &res) {
            guarded(res, [&] {
                auto body = parse_body(req);
                for (const char *k : {"lease_id", "annotator_id", "choice"})
                    if (!body.contains(k) || !body[k].is_string())
                        throw ServiceError(400, std::string("missing ") + k, k);
                auto ack = coordinator.submit_pairwise(body["lease_id"].get<std::string>(),
                                                       body["annotator_id"].get<std::string>(),
                                                       rubric::parse_side(body["choice"].get<std::string>()));
                reply(res, 200, {{"id", ack.record_id}, {"status", ack.duplicate ? "duplicate" : "stored"}});
            });
        });

        http.Get("/progress", [this](const httplib::Request &, httplib::Response &res) {
            guarded(res, [&] { reply(res, 200, to_json(coordinator.progress())); });
        });

        http.Get(R"(/transcripts/(.+))", [this](const httplib::Request &req, httplib::Response &res) {
            guarded(res, [&] {
                const auto *t = coordinator.transcript(req.matches[1]);
                if (!t)
                    throw ServiceError(404, "unknown transcript " + std::string(req.matches[1]), "id");
                reply(res, 200, sim::to_json(*t));
            });
        });

        http.Get("/rubrics", [](const httplib::Request &, httplib::Response &res) {
            reply(res, 200,
                  json::array({rubric::spec_to_json(rubric::spec(rubric::RubricKind::eval7)),
                               rubric::spec_to_json(rubric::spec(rubric::RubricKind::roleplay6))}));
        });
    }
};

Server::Server(Coordinator &coordinator, ServerConfig config)
    : impl_(std::make_unique<Impl>(coordinator, std::move(config))) {
    impl_->routes();
}

Server::~Server() { stop(); }

int Server::start() {
    auto &cfg = impl_->config;
    if (cfg.port == 0)
        port_ = impl_->http.bind_to_any_port(cfg.host);
    else
        port_ = impl_->http.bind_to_port(cfg.host, cfg.port) ? cfg.port : -1;
    if (port_ < 0)
        throw EndpointError("annosvc", "cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
    thread_ = std::thread([this] { impl_->http.listen_after_bind(); });
    impl_->http.wait_until_ready();
    return port_;
}

void Server::run() {
    auto &cfg = impl_->config;
    if (!impl_->http.listen(cfg.host, cfg.port))
        throw EndpointError("annosvc", "cannot listen on " + cfg.host + ":" + std::to_string(cfg.port));
}

void Server::stop() {
    if (impl_)
        impl_->http.stop();
    if (thread_.joinable())
        thread_.join();
}

} // namespace esceval::annosvc
