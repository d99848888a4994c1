#pragma once

// Client side of memex/1: a Predictor backed by a remote /predict endpoint.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include "memex/http.hpp"
#include "json.hpp"
#include "memex/core.hpp"
#include "memex/error.hpp"
#include "memex/pii.hpp"
#include "memex/predictor.hpp"
#include "memex/protocol.hpp"

namespace memex {

struct Endpoint {
  std::string origin;  // scheme://host:port
  std::string base;    // path prefix without trailing slash

  static Endpoint parse(const std::string& url) {
    const auto scheme = url.find("://");
    require(scheme != std::string::npos, ErrorCode::invalid_argument, "endpoint needs a scheme: " + url);
    require(url.compare(0, scheme, "http") == 0 && scheme == 4, ErrorCode::invalid_argument,
            "only http:// endpoints are supported: " + url);
    const auto slash = url.find('/', scheme + 3);
    Endpoint e;
    e.origin = url.substr(0, slash);
    e.base = slash == std::string::npos ? "" : url.substr(slash);
    while (!e.base.empty() && e.base.back() == '/') e.base.pop_back();
    return e;
  }

  std::string path(const char* p) const { return base + p; }
};

inline bool looks_like_endpoint(const std::string& s) { return s.rfind("http://", 0) == 0 || s.rfind("https://", 0) == 0; }

struct ClientOptions {
  std::chrono::milliseconds timeout{60000};
  std::size_t max_in_flight = 8;
  std::size_t retries = 2;
  /// Bearer token; when empty the MEMEX_BEARER_TOKEN variable is consulted.
  std::string bearer_token;
};

/// Handshake result plus connection state. Shareable across threads.
class RemoteModel final : public Predictor {
 public:
  /// Fetches and validates /manifest.
  static std::shared_ptr<RemoteModel> connect(const std::string& url, ClientOptions opts = {}) {
    std::shared_ptr<RemoteModel> m(new RemoteModel(Endpoint::parse(url), std::move(opts)));
    m->manifest_ = protocol::manifest_from_json(m->call("GET", protocol::kManifestPath, nullptr));
    m->vocab_ = VocabSpec(m->manifest_.vocab_size, m->manifest_.mask_id);
    return m;
  }

  VocabSpec vocab() const override { return vocab_; }
  std::optional<std::size_t> fixed_length() const override { return manifest_.fixed_length; }
  std::optional<std::size_t> max_length() const override { return manifest_.max_length; }
  const protocol::Manifest& manifest() const { return manifest_; }

  /// One /predict round trip for all targets.
  std::vector<Distribution> predict(const TokenSeq& observed, std::span<const Index> targets) const override {
    require(observed.size() <= manifest_.max_length, ErrorCode::length_mismatch,
            "sequence of " + std::to_string(observed.size()) + " tokens exceeds max_length " +
                std::to_string(manifest_.max_length));
    for (Index l : targets)
      require(l < observed.size() && vocab_.is_mask(observed[l]), ErrorCode::invalid_argument,
              "target position " + std::to_string(l) + " is not masked");
    const std::string id = std::to_string(next_id_.fetch_add(1));
    const auto body = protocol::predict_request(observed, vocab_.mask_id, targets, id);
    const auto resp = call("POST", protocol::kPredictPath, &body);
    require(resp.value("request_id", id) == id, ErrorCode::protocol, "response answers a different request id");
    return protocol::decode_logprobs(resp, targets.size(), vocab_.size);
  }

  std::size_t requests() const { return requests_.load(); }

  /// Optional /tokenize extension.
  Encoding tokenize(std::string_view text) const {
    const nlohmann::json body = {{"version", protocol::kVersion}, {"text", std::string(text)}};
    const auto resp = call("POST", protocol::kTokenizePath, &body);
    protocol::check_version(resp);
    Encoding e;
    try {
      e.tokens = resp.at("tokens").get<std::vector<Token>>();
      e.spans = resp.at("spans").get<std::vector<std::pair<std::size_t, std::size_t>>>();
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorCode::protocol, std::string("malformed tokenize response: ") + ex.what());
    }
    require(e.tokens.size() == e.spans.size(), ErrorCode::shape_mismatch, "one span per token");
    return e;
  }

 private:
  RemoteModel(Endpoint ep, ClientOptions opts)
      : endpoint_(std::move(ep)), opts_(std::move(opts)), slots_(static_cast<std::ptrdiff_t>(opts_.max_in_flight)) {
    require(opts_.max_in_flight >= 1, ErrorCode::invalid_argument, "max_in_flight must be >= 1");
    if (opts_.bearer_token.empty())
      if (const char* env = std::getenv(protocol::kBearerEnv)) opts_.bearer_token = env;
  }

  std::unique_ptr<httplib::Client> acquire() const {
    {
      std::lock_guard<std::mutex> lock(pool_mu_);
      if (!pool_.empty()) {
        auto c = std::move(pool_.back());
        pool_.pop_back();
        return c;
      }
    }
    auto c = std::make_unique<httplib::Client>(endpoint_.origin);
    const auto us = std::chrono::duration_cast<std::chrono::microseconds>(opts_.timeout).count();
    c->set_connection_timeout(us / 1000000, us % 1000000);
    c->set_read_timeout(us / 1000000, us % 1000000);
    c->set_write_timeout(us / 1000000, us % 1000000);
    c->set_keep_alive(true);
    if (!opts_.bearer_token.empty()) c->set_bearer_token_auth(opts_.bearer_token);
    return c;
  }

  void release(std::unique_ptr<httplib::Client> c) const {
    std::lock_guard<std::mutex> lock(pool_mu_);
    pool_.push_back(std::move(c));
  }

  nlohmann::json call(const char* method, const char* path, const nlohmann::json* body) const {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } guard{slots_};
    ++requests_;
    const std::string target = endpoint_.path(path);
    const std::string payload = body ? body->dump() : std::string{};
    httplib::Error last = httplib::Error::Success;
    for (std::size_t attempt = 0; attempt <= opts_.retries; ++attempt) {
      auto client = acquire();
      httplib::Result res = std::string(method) == "GET"
                                ? client->Get(target)
                                : client->Post(target, payload, "application/json");
      if (!res) {
        last = res.error();
        continue;  // the connection is dropped; requests are stateless, so resending is safe
      }
      release(std::move(client));
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception&) {
        fail(ErrorCode::protocol, std::string(path) + " returned HTTP " + std::to_string(res->status) +
                                      " with a non-JSON body");
      }
      if (res->status != 200) {
        std::string code = "http-" + std::to_string(res->status), msg;
        if (j.contains("error") && j["error"].is_object()) {
          code = j["error"].value("code", code);
          msg = j["error"].value("message", std::string{});
        }
        fail(code == "version-mismatch" ? ErrorCode::protocol_version : ErrorCode::protocol,
             std::string(path) + ": " + code + (msg.empty() ? "" : ": " + msg));
      }
      return j;
    }
    fail(last == httplib::Error::Read || last == httplib::Error::Write ? ErrorCode::timeout : ErrorCode::unreachable,
         endpoint_.origin + target + ": " + httplib::to_string(last));
  }

  Endpoint endpoint_;
  ClientOptions opts_;
  protocol::Manifest manifest_;
  VocabSpec vocab_;
  mutable std::counting_semaphore<> slots_;
  mutable std::mutex pool_mu_;
  mutable std::vector<std::unique_ptr<httplib::Client>> pool_;
  mutable std::atomic<std::uint64_t> next_id_{0};
  mutable std::atomic<std::size_t> requests_{0};
};

inline std::shared_ptr<RemoteModel> handshake(const std::string& url, ClientOptions opts = {}) {
  return RemoteModel::connect(url, std::move(opts));
}

/// Tokenizer served by a model endpoint's /tokenize extension.
class RemoteTokenizer final : public Tokenizer {
 public:
  explicit RemoteTokenizer(std::shared_ptr<const RemoteModel> model) : model_(std::move(model)) {}
  std::string name() const override { return model_->manifest().tokenizer_name; }
  std::size_t vocab_size() const override { return model_->vocab().size; }
  Encoding encode(std::string_view text) const override { return model_->tokenize(text); }

 private:
  std::shared_ptr<const RemoteModel> model_;
};

}  // namespace memex
