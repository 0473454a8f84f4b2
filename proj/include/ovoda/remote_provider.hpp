#pragma once

// HTTP embedding provider. RemoteProvider speaks the JSON wire protocol to an
// external service; ProviderServer exposes any local provider over the same
// protocol (used by tests and the `serve-provider` command).

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "ovoda/embedding.hpp"
#include "ovoda/errors.hpp"
#include "ovoda/json_io.hpp"

namespace ovoda {

namespace wire {

inline json text_request(const std::vector<std::string>& inputs) { return json{{"inputs", inputs}}; }

inline json image_request(const ImageQuery& q) {
  return json{{"image_id", q.image_id},
              {"rect", {q.rect.x_min, q.rect.y_min, q.rect.x_max, q.rect.y_max}},
              {"hflip", q.hflip}};
}

inline json points_request(const std::vector<Vec3>& points) {
  json arr = json::array();
  for (const auto& p : points) arr.push_back({p.x(), p.y(), p.z()});
  return json{{"points", arr}};
}

inline json vectors_response(std::size_t dim, const std::vector<Embedding>& vectors) {
  return json{{"dim", dim}, {"vectors", vectors}};
}

inline json error_response(const std::string& message, bool retryable) {
  return json{{"error", message}, {"retryable", retryable}};
}

/// Parses {"dim": D, "vectors": [[...], ...]} and checks every vector has
/// length D and `expected_dim` (when non-zero).
inline std::vector<Embedding> parse_vectors(const json& body, std::size_t expected_count, std::size_t expected_dim) {
  if (!body.is_object() || !body.contains("dim") || !body.contains("vectors"))
    throw ProviderError("malformed provider response: expected {\"dim\", \"vectors\"}", false);
  if (!body["dim"].is_number_unsigned()) throw ProviderError("malformed provider response: bad dim", false);
  const auto dim = body["dim"].get<std::size_t>();
  if (expected_dim != 0 && dim != expected_dim)
    throw ProviderError("provider dimension " + std::to_string(dim) + " != expected " + std::to_string(expected_dim),
                        false);
  const json& vs = body["vectors"];
  if (!vs.is_array() || vs.size() != expected_count)
    throw ProviderError("malformed provider response: expected " + std::to_string(expected_count) + " vectors", false);
  std::vector<Embedding> out;
  out.reserve(vs.size());
  for (const auto& v : vs) {
    if (!v.is_array() || v.size() != dim) throw ProviderError("malformed provider response: vector length", false);
    Embedding e;
    e.reserve(dim);
    for (const auto& x : v) {
      if (!x.is_number()) throw ProviderError("malformed provider response: non-numeric entry", false);
      e.push_back(x.get<double>());
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline ImageQuery parse_image_request(const json& body) {
  if (!body.is_object() || !body.contains("image_id") || !body.contains("rect"))
    throw SchemaError("image request needs image_id and rect");
  if (!body["image_id"].is_string()) throw SchemaError("image_id must be a string");
  const json& r = body["rect"];
  if (!r.is_array() || r.size() != 4) throw SchemaError("rect must be [x0, y0, x1, y1]");
  for (const auto& x : r)
    if (!x.is_number()) throw SchemaError("rect entries must be numbers");
  ImageQuery q;
  q.image_id = body["image_id"].get<std::string>();
  q.rect = {r[0].get<double>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>()};
  if (body.contains("hflip")) {
    if (!body["hflip"].is_boolean()) throw SchemaError("hflip must be a boolean");
    q.hflip = body["hflip"].get<bool>();
  }
  return q;
}

inline std::vector<std::string> parse_text_request(const json& body) {
  if (!body.is_object() || !body.contains("inputs") || !body["inputs"].is_array())
    throw SchemaError("text request needs an inputs array");
  std::vector<std::string> out;
  for (const auto& s : body["inputs"]) {
    if (!s.is_string()) throw SchemaError("inputs must be strings");
    out.push_back(s.get<std::string>());
  }
  return out;
}

inline std::vector<Vec3> parse_points_request(const json& body) {
  if (!body.is_object() || !body.contains("points") || !body["points"].is_array())
    throw SchemaError("points request needs a points array");
  std::vector<Vec3> out;
  for (const auto& p : body["points"]) {
    if (!p.is_array() || p.size() != 3) throw SchemaError("each point must be [x, y, z]");
    for (const auto& x : p)
      if (!x.is_number()) throw SchemaError("point coordinates must be numbers");
    out.emplace_back(p[0].get<double>(), p[1].get<double>(), p[2].get<double>());
  }
  return out;
}

}  // namespace wire

struct RemoteProviderConfig {
  std::string url = "http://127.0.0.1:8765";
  std::size_t dim = 256;
  double timeout_s = 10.0;
  int retries = 2;
  int backoff_ms = 50;
};

class RemoteProvider final : public EmbeddingProvider {
 public:
  explicit RemoteProvider(RemoteProviderConfig cfg) : cfg_(std::move(cfg)), client_(cfg_.url) {
    if (!client_.is_valid()) throw ConfigError("provider url '" + cfg_.url + "' is not a valid http url");
    const auto sec = static_cast<time_t>(cfg_.timeout_s);
    const auto usec = static_cast<time_t>((cfg_.timeout_s - static_cast<double>(sec)) * 1e6);
    client_.set_connection_timeout(sec, usec);
    client_.set_read_timeout(sec, usec);
    client_.set_write_timeout(sec, usec);
  }

  std::size_t dim() const override { return cfg_.dim; }

  std::vector<Embedding> embed_text(const std::vector<std::string>& inputs) override {
    if (inputs.empty()) return {};
    return wire::parse_vectors(post("/v1/embed/text", wire::text_request(inputs)), inputs.size(), cfg_.dim);
  }

  Embedding embed_image(const ImageQuery& query) override {
    return wire::parse_vectors(post("/v1/embed/image", wire::image_request(query)), 1, cfg_.dim).front();
  }

  Embedding embed_points(const std::vector<Vec3>& points) override {
    return wire::parse_vectors(post("/v1/embed/points", wire::points_request(points)), 1, cfg_.dim).front();
  }

  /// GET /v1/health; returns the parsed body.
  json health() {
    auto res = client_.Get("/v1/health");
    if (!res) throw ProviderError("provider unreachable at " + cfg_.url + ": " + httplib::to_string(res.error()), true);
    if (res->status != 200) throw ProviderError("provider health returned HTTP " + std::to_string(res->status), true);
    json body = json::parse(res->body, nullptr, false);
    if (body.is_discarded()) throw ProviderError("provider health body is not JSON", false);
    return body;
  }

  std::size_t requests_sent() const { return requests_; }

 private:
  json post(const std::string& path, const json& request) {
    const std::string payload = request.dump();
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
      if (attempt > 0 && cfg_.backoff_ms > 0)
        std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.backoff_ms << (attempt - 1)));
      ++requests_;
      auto res = client_.Post(path, payload, "application/json");
      if (!res) {
        last_error = "provider unreachable at " + cfg_.url + ": " + httplib::to_string(res.error());
        continue;
      }
      json body = json::parse(res->body, nullptr, false);
      if (res->status == 200) {
        if (body.is_discarded()) throw ProviderError(path + ": response is not JSON", false);
        return body;
      }
      std::string message = "HTTP " + std::to_string(res->status);
      bool retryable = res->status >= 500;
      if (!body.is_discarded() && body.is_object()) {
        if (body.contains("error") && body["error"].is_string()) message += ": " + body["error"].get<std::string>();
        if (body.contains("retryable") && body["retryable"].is_boolean()) retryable = body["retryable"].get<bool>();
      }
      if (!retryable) throw ProviderError(path + ": " + message, false);
      last_error = path + ": " + message;
    }
    throw ProviderError(last_error + " (after " + std::to_string(cfg_.retries + 1) + " attempts)", true);
  }

  RemoteProviderConfig cfg_;
  httplib::Client client_;
  std::size_t requests_ = 0;
};

/// Serves a provider over the wire protocol on a background thread.
class ProviderServer {
 public:
  explicit ProviderServer(EmbeddingProvider& provider) : provider_(provider) {
    server_.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
      const auto caps = provider_.capabilities();
      json body{{"status", "ok"},
                {"dim", provider_.dim()},
                {"capabilities", {{"text", caps.text}, {"image", caps.image}, {"points", caps.points}}}};
      res.set_content(body.dump(), "application/json");
    });
    server_.Post("/v1/embed/text", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [this](const json& body) {
        const auto inputs = wire::parse_text_request(body);
        return wire::vectors_response(provider_.dim(), provider_.embed_text(inputs));
      });
    });
    server_.Post("/v1/embed/image", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [this](const json& body) {
        const auto q = wire::parse_image_request(body);
        return wire::vectors_response(provider_.dim(), {provider_.embed_image(q)});
      });
    });
    server_.Post("/v1/embed/points", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [this](const json& body) {
        const auto pts = wire::parse_points_request(body);
        return wire::vectors_response(provider_.dim(), {provider_.embed_points(pts)});
      });
    });
  }

  ~ProviderServer() { stop(); }
  ProviderServer(const ProviderServer&) = delete;
  ProviderServer& operator=(const ProviderServer&) = delete;

  /// Binds (port 0 picks a free port) and starts serving; returns the port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw ProviderError("cannot bind provider server on " + host + ":" + std::to_string(port), false);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stop() is called elsewhere.
  void run(const std::string& host, int port) {
    if (!server_.listen(host, port))
      throw ProviderError("cannot listen on " + host + ":" + std::to_string(port), false);
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  /// Makes the next `n` embed requests fail with 503 retryable (fault injection).
  void fail_next(int n) { fail_budget_ = n; }

 private:
  template <typename F>
  void handle(const httplib::Request& req, httplib::Response& res, F&& fn) {
    if (fail_budget_ > 0) {
      --fail_budget_;
      res.status = 503;
      res.set_content(wire::error_response("injected overload", true).dump(), "application/json");
      return;
    }
    json body = json::parse(req.body, nullptr, false);
    try {
      if (body.is_discarded()) throw SchemaError("request body is not JSON");
      res.set_content(fn(body).dump(), "application/json");
    } catch (const ProviderError& e) {
      res.status = e.retryable() ? 503 : 422;
      res.set_content(wire::error_response(e.what(), e.retryable()).dump(), "application/json");
    } catch (const Error& e) {
      res.status = 400;
      res.set_content(wire::error_response(e.what(), false).dump(), "application/json");
    }
  }

  EmbeddingProvider& provider_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  std::atomic<int> fail_budget_{0};
};

}  // namespace ovoda
