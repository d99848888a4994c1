#pragma once

// memex/1 wire protocol: JSON bodies over HTTP. See docs/protocol.md.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "memex/core.hpp"
#include "memex/error.hpp"

namespace memex::protocol {

inline constexpr const char* kVersion = "memex/1";
inline constexpr const char* kManifestPath = "/manifest";
inline constexpr const char* kPredictPath = "/predict";
inline constexpr const char* kTokenizePath = "/tokenize";
inline constexpr const char* kBearerEnv = "MEMEX_BEARER_TOKEN";

struct Manifest {
  std::string version = kVersion;
  std::size_t vocab_size = 0;
  Token mask_id = -1;
  std::string tokenizer_name;
  std::size_t max_length = 0;
  std::optional<std::size_t> fixed_length;  // server accepts only this exact length when set
};

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json j = {{"version", m.version},
                      {"vocab_size", m.vocab_size},
                      {"mask_id", m.mask_id},
                      {"tokenizer_name", m.tokenizer_name},
                      {"max_length", m.max_length}};
  if (m.fixed_length) j["fixed_length"] = *m.fixed_length;
  return j;
}

inline void check_version(const nlohmann::json& j) {
  require(j.is_object() && j.contains("version") && j["version"].is_string(), ErrorCode::protocol,
          "message has no version string");
  const auto v = j["version"].get<std::string>();
  require(v == kVersion, ErrorCode::protocol_version,
          "protocol version '" + v + "' is not supported (expected '" + kVersion + "')");
}

/// Parses and validates a manifest: version, K >= 2, sentinel outside 0..K-1, max_length >= 1.
inline Manifest manifest_from_json(const nlohmann::json& j) {
  check_version(j);
  Manifest m;
  try {
    m.vocab_size = j.at("vocab_size").get<std::size_t>();
    m.mask_id = j.at("mask_id").get<Token>();
    m.tokenizer_name = j.at("tokenizer_name").get<std::string>();
    m.max_length = j.at("max_length").get<std::size_t>();
    if (j.contains("fixed_length") && !j["fixed_length"].is_null())
      m.fixed_length = j["fixed_length"].get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::protocol, std::string("malformed manifest: ") + e.what());
  }
  require(m.vocab_size >= 2, ErrorCode::protocol, "manifest vocab_size must be >= 2");
  require(m.mask_id < 0 || static_cast<std::size_t>(m.mask_id) >= m.vocab_size, ErrorCode::protocol,
          "manifest mask_id collides with an ordinary token");
  require(m.max_length >= 1, ErrorCode::protocol, "manifest max_length must be >= 1");
  if (m.fixed_length)
    require(*m.fixed_length <= m.max_length, ErrorCode::protocol, "fixed_length exceeds max_length");
  return m;
}

/// tokens: id or null at masked positions.
inline nlohmann::json predict_request(const TokenSeq& observed, Token mask_id, std::span<const Index> positions,
                                      const std::string& request_id) {
  nlohmann::json toks = nlohmann::json::array();
  for (Token t : observed) toks.push_back(t == mask_id ? nlohmann::json(nullptr) : nlohmann::json(t));
  return {{"version", kVersion},
          {"request_id", request_id},
          {"tokens", std::move(toks)},
          {"positions", std::vector<Index>(positions.begin(), positions.end())}};
}

struct PredictRequest {
  TokenSeq observed;  // sentinel at null slots
  std::vector<Index> positions;
  std::string request_id;
};

inline PredictRequest parse_predict_request(const nlohmann::json& j, Token mask_id) {
  check_version(j);
  PredictRequest r;
  try {
    std::vector<Token> toks;
    for (const auto& t : j.at("tokens")) toks.push_back(t.is_null() ? mask_id : t.get<Token>());
    r.observed = TokenSeq(std::move(toks));
    r.positions = j.at("positions").get<std::vector<Index>>();
    r.request_id = j.value("request_id", std::string{});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::protocol, std::string("malformed predict request: ") + e.what());
  }
  return r;
}

inline nlohmann::json error_body(const std::string& code, const std::string& message) {
  return {{"version", kVersion}, {"error", {{"code", code}, {"message", message}}}};
}

inline constexpr double kRawNormTolerance = 1e-3;
inline constexpr double kNormTolerance = 1e-4;

/// Checks shape, finiteness and normalization of received log-probabilities and renormalizes them.
inline std::vector<std::vector<double>> decode_logprobs(const nlohmann::json& j, std::size_t positions,
                                                        std::size_t vocab_size) {
  check_version(j);
  require(j.contains("logprobs") && j["logprobs"].is_array(), ErrorCode::protocol, "response has no logprobs array");
  const auto& rows = j["logprobs"];
  require(rows.size() == positions, ErrorCode::shape_mismatch,
          "expected " + std::to_string(positions) + " distributions, got " + std::to_string(rows.size()));
  std::vector<std::vector<double>> out;
  out.reserve(positions);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    require(row.is_array() && row.size() == vocab_size, ErrorCode::shape_mismatch,
            "distribution " + std::to_string(r) + " has " + std::to_string(row.is_array() ? row.size() : 0) +
                " entries, expected K = " + std::to_string(vocab_size));
    std::vector<double> p(vocab_size);
    double total = 0.0;
    for (std::size_t v = 0; v < vocab_size; ++v) {
      require(row[v].is_number(), ErrorCode::non_finite, "non-numeric log-probability");
      const double lp = row[v].get<double>();
      require(std::isfinite(lp), ErrorCode::non_finite, "non-finite log-probability");
      p[v] = std::exp(lp);
      total += p[v];
    }
    require(std::abs(total - 1.0) <= kRawNormTolerance, ErrorCode::protocol,
            "distribution " + std::to_string(r) + " sums to " + std::to_string(total));
    double check = 0.0;
    for (double& x : p) {
      x /= total;
      check += x;
    }
    require(std::abs(check - 1.0) <= kNormTolerance, ErrorCode::protocol, "renormalized distribution is improper");
    out.push_back(std::move(p));
  }
  return out;
}

inline nlohmann::json encode_logprobs(const std::vector<std::vector<double>>& dists, const std::string& request_id) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& d : dists) {
    nlohmann::json row = nlohmann::json::array();
    // Zero probabilities have no finite log; clamp to the smallest normal double's log.
    for (double p : d) row.push_back(p > 0.0 ? std::log(p) : -708.0);
    rows.push_back(std::move(row));
  }
  return {{"version", kVersion}, {"request_id", request_id}, {"logprobs", std::move(rows)}};
}

}  // namespace memex::protocol
