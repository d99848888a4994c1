#pragma once

// In-process memex/1 server wrapping any Predictor. Used for contract tests
// and by `memex serve-toy`.

#include <functional>
#include <memory>
#include <string>
#include <thread>

#include "memex/http.hpp"
#include "json.hpp"
#include "memex/error.hpp"
#include "memex/pii.hpp"
#include "memex/predictor.hpp"
#include "memex/protocol.hpp"

namespace memex {

struct StubOptions {
  std::string tokenizer_name = "byte";
  std::size_t max_length = 0;  // 0: the predictor's fixed length
  std::string version = protocol::kVersion;
  std::string bearer_token;  // required from clients when nonempty
  const Tokenizer* tokenizer = nullptr;  // enables /tokenize
  /// Fault injection: rewrite a /predict response before it is sent.
  std::function<void(nlohmann::json& response, const protocol::PredictRequest& request)> mutate_predict;
  std::function<void(nlohmann::json& manifest)> mutate_manifest;
};

class StubServer {
 public:
  StubServer(const Predictor& model, StubOptions opts = {}) : model_(model), opts_(std::move(opts)) {
    const auto vocab = model_.vocab();
    manifest_.version = opts_.version;
    manifest_.vocab_size = vocab.size;
    manifest_.mask_id = vocab.mask_id;
    manifest_.tokenizer_name = opts_.tokenizer_name;
    manifest_.fixed_length = model_.fixed_length();
    manifest_.max_length = opts_.max_length ? opts_.max_length : model_.max_length().value_or(4096);
    routes();
  }

  ~StubServer() { stop(); }
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    host_ = host;
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    require(port_ > 0, ErrorCode::io, "stub server could not bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stopped.
  void run(const std::string& host, int port) {
    host_ = host;
    port_ = port;
    require(server_.listen(host, port), ErrorCode::io, "stub server could not listen on " + host + ":" +
                                                           std::to_string(port));
  }

  void stop() {
    if (server_.is_running()) server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string url() const { return "http://" + host_ + ":" + std::to_string(port_); }
  std::size_t predict_calls() const { return predict_calls_.load(); }

 private:
  static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  bool authorized(const httplib::Request& req, httplib::Response& res) const {
    if (opts_.bearer_token.empty()) return true;
    if (req.get_header_value("Authorization") == "Bearer " + opts_.bearer_token) return true;
    reply(res, 401, protocol::error_body("unauthorized", "missing or wrong bearer token"));
    return false;
  }

  void routes() {
    server_.Get(protocol::kManifestPath, [this](const httplib::Request& req, httplib::Response& res) {
      if (!authorized(req, res)) return;
      auto j = protocol::to_json(manifest_);
      if (opts_.mutate_manifest) opts_.mutate_manifest(j);
      reply(res, 200, j);
    });
    server_.Post(protocol::kPredictPath, [this](const httplib::Request& req, httplib::Response& res) {
      if (!authorized(req, res)) return;
      ++predict_calls_;
      try {
        const auto body = nlohmann::json::parse(req.body);
        const auto parsed = protocol::parse_predict_request(body, manifest_.mask_id);
        require(parsed.observed.size() <= manifest_.max_length, ErrorCode::length_mismatch,
                "sequence-overflow");
        auto dists = model_.predict(parsed.observed, parsed.positions);
        auto out = protocol::encode_logprobs(dists, parsed.request_id);
        out["version"] = opts_.version;
        if (opts_.mutate_predict) opts_.mutate_predict(out, parsed);
        reply(res, 200, out);
      } catch (const Error& e) {
        const std::string code = e.code() == ErrorCode::protocol_version ? "version-mismatch"
                                 : e.code() == ErrorCode::length_mismatch ? "sequence-overflow"
                                                                          : "bad-request";
        reply(res, 400, protocol::error_body(code, e.what()));
      } catch (const std::exception& e) {
        reply(res, 400, protocol::error_body("bad-request", e.what()));
      }
    });
    server_.Post(protocol::kTokenizePath, [this](const httplib::Request& req, httplib::Response& res) {
      if (!authorized(req, res)) return;
      if (!opts_.tokenizer) {
        reply(res, 404, protocol::error_body("not-supported", "this server has no tokenizer"));
        return;
      }
      try {
        const auto body = nlohmann::json::parse(req.body);
        protocol::check_version(body);
        const auto enc = opts_.tokenizer->encode(body.at("text").get<std::string>());
        reply(res, 200, {{"version", opts_.version}, {"tokens", enc.tokens}, {"spans", enc.spans}});
      } catch (const std::exception& e) {
        reply(res, 400, protocol::error_body("bad-request", e.what()));
      }
    });
  }

  const Predictor& model_;
  StubOptions opts_;
  protocol::Manifest manifest_;
  httplib::Server server_;
  std::thread thread_;
  std::string host_ = "127.0.0.1";
  int port_ = -1;
  std::atomic<std::size_t> predict_calls_{0};
};

}  // namespace memex
