#include "uai/http_service.h"

#include "httplib.h"
#include "json.hpp"

#include "uai/dataset_source.h"
#include "uai/errors.h"

namespace uai {

using nlohmann::json;

ErrorMapping map_error(const std::exception& e) {
  if (dynamic_cast<const NotFoundError*>(&e)) return {404, "not_found"};
  if (dynamic_cast<const ConflictError*>(&e)) return {409, "conflict"};
  if (dynamic_cast<const RejectedSubmission*>(&e)) return {422, "rejected_submission"};
  if (dynamic_cast<const UsageError*>(&e)) return {400, "invalid_request"};
  if (dynamic_cast<const FormatError*>(&e)) return {400, "malformed_input"};
  if (dynamic_cast<const StructuralError*>(&e)) return {400, "invalid_request"};
  if (dynamic_cast<const json::exception*>(&e)) return {400, "malformed_json"};
  if (dynamic_cast<const MigrationError*>(&e)) return {500, "migration"};
  if (dynamic_cast<const IoError*>(&e)) return {500, "io"};
  return {500, "internal"};
}

struct HttpService::Impl {
  RunManager& manager;
  httplib::Server server;

  explicit Impl(RunManager& m) : manager(m) { routes(); }

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  // Runs `handler`, turning library errors into JSON error replies.
  template <typename F>
  static httplib::Server::Handler wrap(F handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(req, res);
      } catch (const std::exception& e) {
        const ErrorMapping m = map_error(e);
        json error = {{"code", m.code}, {"message", e.what()}};
        if (const auto* r = dynamic_cast<const RejectedSubmission*>(&e)) {
          error["offenders"] = r->offenders();
        }
        reply(res, m.status, {{"error", error}});
      }
    };
  }

  static json body_of(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    json doc = json::parse(req.body);
    if (!doc.is_object()) throw UsageError("request body must be a JSON object");
    return doc;
  }

  static std::string key_of(const httplib::Request& req) {
    return req.get_header_value("Idempotency-Key");
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type, Idempotency-Key"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.status = 204;
    });

    server.Get("/health", wrap([](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, {{"version", kApiVersion}, {"status", "ok"}});
    }));

    server.Get("/datasets", wrap([this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, manager.list_datasets());
    }));
    server.Get(R"(/datasets/([^/]+))",
               wrap([this](const httplib::Request& req, httplib::Response& res) {
                 reply(res, 200, manager.describe_dataset(req.matches[1]));
               }));
    server.Post("/datasets", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const json body = body_of(req);
      if (!body.contains("name") || !body.contains("source")) {
        throw UsageError("POST /datasets needs name and source");
      }
      const auto name = body.at("name").get<std::string>();
      reply(res, 201, manager.register_dataset(name, load_source(body.at("source"))));
    }));

    server.Get("/runs", wrap([this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, manager.list_runs());
    }));
    server.Post("/runs", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const json body = body_of(req);
      CreateRunRequest request;
      request.dataset = body.at("dataset").get<std::string>();
      request.expert = expert_mode_from_string(body.value("expert", std::string("human")));
      request.config = run_config_from_json(body.value("config", json::object()));
      request.idempotency_key = key_of(req);
      const std::string id = manager.create_run(request);
      reply(res, 201, manager.get_run(id));
    }));
    server.Get(R"(/runs/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
      reply(res, 200, manager.get_run(req.matches[1]));
    }));
    server.Get(R"(/runs/([^/]+)/queue)",
               wrap([this](const httplib::Request& req, httplib::Response& res) {
                 reply(res, 200, manager.get_queue(req.matches[1]));
               }));
    server.Get(R"(/runs/([^/]+)/metrics)",
               wrap([this](const httplib::Request& req, httplib::Response& res) {
                 reply(res, 200, manager.get_metrics(req.matches[1]));
               }));
    server.Get(R"(/runs/([^/]+)/result)",
               wrap([this](const httplib::Request& req, httplib::Response& res) {
                 reply(res, 200, manager.get_result(req.matches[1]));
               }));
    server.Post(R"(/runs/([^/]+)/labels)",
                wrap([this](const httplib::Request& req, httplib::Response& res) {
                  const json body = body_of(req);
                  std::vector<Answer> answers;
                  for (const auto& a : body.at("answers")) {
                    answers.push_back({a.at("index").get<std::size_t>(), a.at("label").get<int>()});
                  }
                  reply(res, 200, manager.submit_labels(req.matches[1], answers, key_of(req)));
                }));
    server.Post(R"(/runs/([^/]+)/abort)",
                wrap([this](const httplib::Request& req, httplib::Response& res) {
                  reply(res, 200, manager.abort_run(req.matches[1]));
                }));
  }
};

HttpService::HttpService(RunManager& manager) : impl_(std::make_unique<Impl>(manager)) {}

HttpService::~HttpService() { stop(); }

int HttpService::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

void HttpService::serve() { impl_->server.listen_after_bind(); }

void HttpService::stop() { impl_->server.stop(); }

void HttpService::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace uai
