#pragma once

#include <memory>
#include <string>
#include <thread>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "sgde/errors.hpp"
#include "sgde/exchange.hpp"

// HTTP/1.1 transport for the registry. Endpoints:
//   POST /v1/subscribe            body {"client_id": ...} -> requirements
//   POST /v1/generators?client=ID body = artifact JSON    -> push result
//   GET  /v1/generators?client=ID                         -> catalog
//   GET  /v1/generators/<id>?client=ID                    -> artifact bytes
// Errors use a JSON envelope {code, message}.

namespace sgde {

namespace detail {

inline void http_error(httplib::Response& res, int status, const std::string& code,
                       const std::string& message) {
  res.status = status;
  res.set_content(nlohmann::json{{"code", code}, {"message", message}}.dump(),
                  "application/json");
}

template <typename Fn>
void http_guard(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const RequestError& e) {
    http_error(res, 400, "request_error", e.what());
  } catch (const AuthError& e) {
    http_error(res, 401, "auth_error", e.what());
  } catch (const NotFoundError& e) {
    http_error(res, 404, "not_found", e.what());
  } catch (const IntegrityError& e) {
    http_error(res, 400, "integrity_error", e.what());
  } catch (const Error& e) {
    http_error(res, 500, "server_error", e.what());
  }
}

}  // namespace detail

class RegistryHttpServer {
 public:
  explicit RegistryHttpServer(Registry& registry) : registry_(registry) {
    server_.Post("/v1/subscribe", [this](const httplib::Request& req,
                                         httplib::Response& res) {
      detail::http_guard(res, [&] {
        std::string client_id;
        try {
          client_id = nlohmann::json::parse(req.body)
                          .at("client_id")
                          .get<std::string>();
        } catch (const nlohmann::json::exception&) {
          throw RequestError("body must be {\"client_id\": \"...\"}");
        }
        const ServerRequirements reqs = registry_.subscribe(client_id);
        res.set_content(nlohmann::json(reqs).dump(), "application/json");
      });
    });

    server_.Post("/v1/generators", [this](const httplib::Request& req,
                                          httplib::Response& res) {
      detail::http_guard(res, [&] {
        const PushResult result = registry_.push(client_param(req), req.body);
        if (result.accepted) {
          res.set_content(nlohmann::json{{"accepted", true},
                                         {"generator_id", result.generator_id}}
                              .dump(),
                          "application/json");
        } else {
          int status = 403;
          if (result.code == "integrity_reject") status = 400;
          if (result.code == "duplicate_id") status = 409;
          detail::http_error(res, status, result.code, result.reason);
        }
      });
    });

    server_.Get("/v1/generators", [this](const httplib::Request& req,
                                         httplib::Response& res) {
      detail::http_guard(res, [&] {
        const auto rows = registry_.list_generators(client_param(req));
        res.set_content(nlohmann::json{{"generators", rows}}.dump(),
                        "application/json");
      });
    });

    server_.Get("/v1/generators/([^/]+)", [this](const httplib::Request& req,
                                                 httplib::Response& res) {
      detail::http_guard(res, [&] {
        const std::string bytes =
            registry_.pull(client_param(req), req.matches[1].str());
        res.set_content(bytes, "application/json");
      });
    });
  }

  ~RegistryHttpServer() { stop(); }

  // Binds and serves on a background thread. port 0 picks a free port; the
  // bound port is returned.
  int start(const std::string& host, int port) {
    if (port == 0) {
      port = server_.bind_to_any_port(host);
      if (port < 0) throw StartupError("failed to bind HTTP listener");
    } else if (!server_.bind_to_port(host, port)) {
      throw StartupError("failed to bind " + host + ":" + std::to_string(port));
    }
    port_ = port;
    worker_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  void stop() {
    if (worker_.joinable()) {
      server_.stop();
      worker_.join();
    }
  }

  int port() const { return port_; }

 private:
  static std::string client_param(const httplib::Request& req) {
    if (!req.has_param("client")) throw RequestError("missing 'client' parameter");
    return req.get_param_value("client");
  }

  Registry& registry_;
  httplib::Server server_;
  std::thread worker_;
  int port_ = 0;
};

// Client-side transport; hides HTTP behind the ExchangeApi surface.
class HttpExchangeClient final : public ExchangeApi {
 public:
  explicit HttpExchangeClient(const std::string& base_url) : client_(base_url) {
    client_.set_connection_timeout(5, 0);
    client_.set_read_timeout(60, 0);
  }

  ServerRequirements subscribe(const std::string& client_id) override {
    auto res = client_.Post("/v1/subscribe",
                            nlohmann::json{{"client_id", client_id}}.dump(),
                            "application/json");
    return nlohmann::json::parse(expect_ok(res)).get<ServerRequirements>();
  }

  PushResult push(const std::string& client_id, const std::string& bytes) override {
    auto res = client_.Post("/v1/generators?client=" + encode(client_id), bytes,
                            "application/json");
    if (!res) throw Error("exchange server unreachable");
    nlohmann::json j = nlohmann::json::parse(res->body);
    if (res->status == 200)
      return {true, j.at("generator_id").get<std::string>(), "accepted", ""};
    if (res->status == 401) throw AuthError(j.at("message").get<std::string>());
    return {false, "", j.at("code").get<std::string>(),
            j.at("message").get<std::string>()};
  }

  std::vector<CatalogRow> list_generators(const std::string& client_id) override {
    auto res = client_.Get("/v1/generators?client=" + encode(client_id));
    return nlohmann::json::parse(expect_ok(res))
        .at("generators")
        .get<std::vector<CatalogRow>>();
  }

  std::string pull(const std::string& client_id,
                   const std::string& generator_id) override {
    auto res = client_.Get("/v1/generators/" + encode(generator_id) +
                           "?client=" + encode(client_id));
    return expect_ok(res);
  }

 private:
  static std::string encode(const std::string& s) {
    return httplib::detail::encode_url(s);
  }

  static std::string expect_ok(const httplib::Result& res) {
    if (!res) throw Error("exchange server unreachable");
    if (res->status == 200) return res->body;
    std::string code = "server_error";
    std::string message = res->body;
    try {
      nlohmann::json j = nlohmann::json::parse(res->body);
      code = j.value("code", code);
      message = j.value("message", message);
    } catch (const nlohmann::json::exception&) {
    }
    if (res->status == 401) throw AuthError(message);
    if (res->status == 404) throw NotFoundError(message);
    if (res->status == 400) throw RequestError(message);
    throw Error(code + ": " + message);
  }

  httplib::Client client_;
};

}  // namespace sgde
