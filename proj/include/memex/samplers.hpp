#pragma once

// Token-selection rules (temperature, top-k, Gumbel, argmax) and
// masked-position selection rules (greedy confidence, uniform random).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "memex/core.hpp"
#include "memex/numeric.hpp"
#include "memex/predictor.hpp"
#include "memex/random.hpp"

namespace memex {

enum class PositionRule {
  greedy_confidence,  // highest max-probability first, lowest index on ties
  random_uniform,     // uniform k-subset of the remaining positions
  left_to_right,      // lowest remaining indices first (fixed sequential order)
};

struct TokenRule {
  enum class Kind { argmax, temperature, top_k, gumbel };

  Kind kind = Kind::temperature;
  double temperature = 1.0;         // for Kind::temperature, T > 0
  std::size_t k = 1;                // for Kind::top_k, 1 <= k <= K
  double gumbel_temperature = 1.0;  // for Kind::gumbel, T_g >= 0

  static TokenRule plain() { return {}; }
  static TokenRule argmax() { return {Kind::argmax}; }
  static TokenRule with_temperature(double t) { return {Kind::temperature, t}; }
  static TokenRule with_top_k(std::size_t k) { return {Kind::top_k, 1.0, k}; }
  static TokenRule with_gumbel(double tg) { return {Kind::gumbel, 1.0, 1, tg}; }

  void validate(std::size_t vocab_size) const {
    switch (kind) {
      case Kind::argmax: break;
      case Kind::temperature:
        require(temperature > 0.0 && std::isfinite(temperature), ErrorCode::invalid_argument, "temperature must be > 0");
        break;
      case Kind::top_k:
        require(k >= 1 && k <= vocab_size, ErrorCode::invalid_argument, "top-k needs 1 <= k <= K");
        break;
      case Kind::gumbel:
        require(gumbel_temperature >= 0.0 && std::isfinite(gumbel_temperature), ErrorCode::invalid_argument,
                "gumbel temperature must be >= 0");
        break;
    }
  }

  friend bool operator==(const TokenRule&, const TokenRule&) = default;
};

struct SamplerConfig {
  PositionRule position_rule = PositionRule::random_uniform;
  TokenRule token_rule;
  std::uint64_t seed = 0;

  void validate(std::size_t vocab_size) const { token_rule.validate(vocab_size); }
};

inline std::string to_string(PositionRule r) {
  switch (r) {
    case PositionRule::greedy_confidence: return "greedy";
    case PositionRule::random_uniform: return "random";
    case PositionRule::left_to_right: return "left_to_right";
  }
  return "?";
}

inline PositionRule parse_position_rule(const std::string& s) {
  if (s == "greedy" || s == "greedy_confidence") return PositionRule::greedy_confidence;
  if (s == "random" || s == "random_uniform") return PositionRule::random_uniform;
  if (s == "left_to_right" || s == "sequential") return PositionRule::left_to_right;
  fail(ErrorCode::config, "unknown position rule '" + s + "'");
}

/// Index of the largest entry, lowest index on ties.
inline std::size_t argmax_index(std::span<const double> xs) {
  require(!xs.empty(), ErrorCode::invalid_argument, "argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (xs[i] > xs[best]) best = i;
  return best;
}

inline std::vector<double> logits_from_probs(std::span<const double> probs) {
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] > 0.0 ? std::log(probs[i]) : kNegInf;
  return out;
}

/// softmax(logits / T).
inline Distribution temperature_transform(std::span<const double> logits, double temperature) {
  require(temperature > 0.0, ErrorCode::invalid_argument, "temperature must be > 0");
  std::vector<double> scaled(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;
  const double norm = log_sum_exp(scaled);
  require(std::isfinite(norm), ErrorCode::invalid_argument, "logits are not normalizable");
  Distribution out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(scaled[i] - norm);
  return out;
}

/// Keeps the k most probable tokens (lowest index on ties) and renormalizes.
inline Distribution topk_transform(std::span<const double> probs, std::size_t k) {
  require(k >= 1 && k <= probs.size(), ErrorCode::invalid_argument, "top-k needs 1 <= k <= K");
  std::vector<std::size_t> idx(probs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  Distribution out(probs.size(), 0.0);
  double kept = 0.0;
  for (std::size_t i = 0; i < k; ++i) kept += probs[idx[i]];
  require(kept > 0.0, ErrorCode::invalid_argument, "top-k set has zero mass");
  for (std::size_t i = 0; i < k; ++i) out[idx[i]] = probs[idx[i]] / kept;
  return out;
}

/// argmax_v exp(l_v) / (-log U_v)^T_g with U_v ~ Uniform(0,1); T_g = 0 is plain argmax.
///
/// Logits and probabilities are interchangeable inputs: the argmax is invariant to the additive constant.
inline std::size_t gumbel_select(std::span<const double> logits, double gumbel_temperature, Rng& rng) {
  require(gumbel_temperature >= 0.0, ErrorCode::invalid_argument, "gumbel temperature must be >= 0");
  if (gumbel_temperature == 0.0) return argmax_index(logits);
  std::size_t best = 0;
  double best_score = kNegInf;
  bool any = false;
  for (std::size_t v = 0; v < logits.size(); ++v) {
    double u;
    do {
      u = rng.uniform();
    } while (u <= 0.0);
    const double score = logits[v] - gumbel_temperature * std::log(-std::log(u));
    if (!any || score > best_score) {
      best = v;
      best_score = score;
      any = true;
    }
  }
  return best;
}

/// Distribution the token rule actually samples from, given the model's predictive probabilities.
///
/// Gumbel perturbation at temperature T_g selects token v with probability softmax(l / T_g)_v.
inline Distribution effective_distribution(std::span<const double> probs, const TokenRule& rule) {
  switch (rule.kind) {
    case TokenRule::Kind::argmax: {
      Distribution d(probs.size(), 0.0);
      d[argmax_index(probs)] = 1.0;
      return d;
    }
    case TokenRule::Kind::temperature:
      if (rule.temperature == 1.0) return Distribution(probs.begin(), probs.end());
      return temperature_transform(logits_from_probs(probs), rule.temperature);
    case TokenRule::Kind::top_k: return topk_transform(probs, rule.k);
    case TokenRule::Kind::gumbel:
      if (rule.gumbel_temperature == 0.0) return effective_distribution(probs, TokenRule::argmax());
      return temperature_transform(logits_from_probs(probs), rule.gumbel_temperature);
  }
  return {};
}

/// Probability that the token rule emits `token`.
inline double effective_probability(std::span<const double> probs, const TokenRule& rule, Token token) {
  if (rule.kind == TokenRule::Kind::temperature && rule.temperature == 1.0)
    return probs[static_cast<std::size_t>(token)];
  return effective_distribution(probs, rule)[static_cast<std::size_t>(token)];
}

inline Token sample_token(std::span<const double> probs, const TokenRule& rule, Rng& rng) {
  switch (rule.kind) {
    case TokenRule::Kind::argmax: return static_cast<Token>(argmax_index(probs));
    case TokenRule::Kind::gumbel:
      return static_cast<Token>(gumbel_select(logits_from_probs(probs), rule.gumbel_temperature, rng));
    case TokenRule::Kind::temperature:
      if (rule.temperature == 1.0) return static_cast<Token>(sample_categorical(rng, probs));
      [[fallthrough]];
    case TokenRule::Kind::top_k: {
      auto d = effective_distribution(probs, rule);
      return static_cast<Token>(sample_categorical(rng, d));
    }
  }
  return 0;
}

/// Confidence of a predictive distribution: the probability of its argmax token.
inline double confidence(std::span<const double> probs) { return probs[argmax_index(probs)]; }

/// Chooses k of the candidate positions; `confidences[i]` belongs to `candidates[i]`. Result is sorted.
inline std::vector<Index> select_positions(std::span<const Index> candidates, std::span<const double> confidences,
                                           std::size_t k, PositionRule rule, Rng& rng) {
  require(k <= candidates.size(), ErrorCode::invalid_argument, "cannot select more positions than candidates");
  std::vector<Index> chosen;
  switch (rule) {
    case PositionRule::random_uniform:
      chosen = sample_without_replacement(rng, std::vector<Index>(candidates.begin(), candidates.end()), k);
      break;
    case PositionRule::left_to_right: {
      chosen.assign(candidates.begin(), candidates.end());
      std::sort(chosen.begin(), chosen.end());
      chosen.resize(k);
      break;
    }
    case PositionRule::greedy_confidence: {
      require(confidences.size() == candidates.size(), ErrorCode::invalid_argument, "one confidence per candidate");
      std::vector<std::size_t> idx(candidates.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (confidences[a] != confidences[b]) return confidences[a] > confidences[b];
        return candidates[a] < candidates[b];
      });
      for (std::size_t i = 0; i < k; ++i) chosen.push_back(candidates[idx[i]]);
      break;
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

}  // namespace memex
