#pragma once

// Exact closed-form conditional predictor over a finite weighted corpus.
//
// Generative semantics: pick component j with probability w_j / sum(w), then
// emit every position independently, as the component's own token with
// probability (1 - eta) + eta/K and as any other given token with eta/K.
// predict() returns the exact Bayes posterior predictive of that process.

#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "memex/core.hpp"
#include "memex/engine.hpp"
#include "memex/numeric.hpp"
#include "memex/predictor.hpp"
#include "memex/random.hpp"

namespace memex {

struct Corpus {
  std::vector<TokenSeq> sequences;
  std::vector<double> weights;  // one per sequence; empty means uniform

  std::size_t size() const { return sequences.size(); }

  void add(TokenSeq seq, double weight = 1.0) {
    sequences.push_back(std::move(seq));
    weights.push_back(weight);
  }

  double weight(std::size_t i) const { return weights.empty() ? 1.0 : weights[i]; }

  /// Smallest K covering every token (at least 2).
  std::size_t inferred_vocab_size() const {
    Token hi = 1;
    for (const auto& s : sequences)
      for (Token t : s) hi = std::max(hi, t);
    return static_cast<std::size_t>(hi) + 1;
  }
};

/// Reads newline-delimited records: whitespace-separated token ids, optional `# weight=<float>` suffix.
/// Blank lines and lines starting with '#' are skipped.
inline Corpus read_corpus(std::istream& in) {
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    double weight = 1.0;
    auto hash = line.find('#');
    std::string body = line.substr(0, hash);
    if (hash != std::string::npos) {
      std::string tail = line.substr(hash + 1);
      auto eq = tail.find("weight=");
      if (eq != std::string::npos) {
        try {
          weight = std::stod(tail.substr(eq + 7));
        } catch (const std::exception&) {
          fail(ErrorCode::parse, "line " + std::to_string(lineno) + ": bad weight");
        }
      }
    }
    std::istringstream fields(body);
    std::vector<Token> tokens;
    std::string field;
    while (fields >> field) {
      std::size_t pos = 0;
      long v = 0;
      try {
        v = std::stol(field, &pos);
      } catch (const std::exception&) {
        fail(ErrorCode::parse, "line " + std::to_string(lineno) + ": bad token '" + field + "'");
      }
      require(pos == field.size() && v >= 0, ErrorCode::parse,
              "line " + std::to_string(lineno) + ": bad token '" + field + "'");
      tokens.push_back(static_cast<Token>(v));
    }
    if (tokens.empty()) continue;
    corpus.add(TokenSeq(std::move(tokens)), weight);
  }
  return corpus;
}

inline void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& s = corpus.sequences[i];
    for (std::size_t j = 0; j < s.size(); ++j) out << (j ? " " : "") << s[j];
    if (corpus.weight(i) != 1.0) out << " # weight=" << format_double(corpus.weight(i));
    out << '\n';
  }
}

struct NllEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  std::size_t draws = 0;
};

class PosteriorModel final : public Predictor {
 public:
  static constexpr double kDefaultEta = 0.05;
  static constexpr double kDefaultTMin = 1e-3;

  VocabSpec vocab() const override { return vocab_; }
  std::optional<std::size_t> fixed_length() const override { return length_; }

  double eta() const { return eta_; }
  std::size_t length() const { return length_; }
  std::size_t components() const { return log_prior_.size(); }
  const TokenSeq& component(std::size_t j) const { return components_[j]; }
  double component_weight(std::size_t j) const { return weights_[j]; }

  /// Emission probability of the component's own token: (1 - eta) + eta/K.
  double hit_prob() const { return hit_; }
  /// Emission probability of any other fixed token: eta/K.
  double miss_prob() const { return miss_; }

  /// Normalized log posterior over components given the observed tokens.
  std::vector<double> log_posterior(const TokenSeq& observed) const {
    auto lp = log_weights(observed);
    const double norm = log_sum_exp(lp);
    for (double& v : lp) v -= norm;
    return lp;
  }

  std::vector<Distribution> predict(const TokenSeq& observed, std::span<const Index> targets) const override {
    auto post = log_weights(observed);
    for (Index l : targets)
      if (l >= length_ || observed[l] != vocab_.mask_id)
        fail(ErrorCode::invalid_argument, "target position " + std::to_string(l) + " is not masked");
    const double top = *std::max_element(post.begin(), post.end());
    double total = 0.0;
    for (double& v : post) {
      v = std::exp(v - top);
      total += v;
    }
    for (double& v : post) v /= total;

    std::vector<Distribution> out;
    out.reserve(targets.size());
    for (Index l : targets) {
      // p(v) = miss + (hit - miss) * P(component token at l == v)
      Distribution d(vocab_.size, 0.0);
      const Token* col = flat_.data() + l;
      for (std::size_t j = 0; j < post.size(); ++j) d[static_cast<std::size_t>(col[j * length_])] += post[j];
      for (double& v : d) v = miss_ + (hit_ - miss_) * v;
      out.push_back(std::move(d));
    }
    return out;
  }

  /// log P(z_U) where U is the set of non-sentinel positions of `observed`.
  double log_marginal(const TokenSeq& observed) const {
    check_observed(observed);
    std::vector<double> lp(log_prior_);
    for (std::size_t j = 0; j < lp.size(); ++j) {
      for (Index l = 0; l < length_; ++l) {
        const Token t = observed[l];
        if (t == vocab_.mask_id) continue;
        lp[j] += (t == components_[j][l]) ? log_hit_ : log_miss_;
      }
    }
    return log_sum_exp(lp);
  }

  /// Next-token conditional given a left prefix; every later position is unobserved.
  Distribution arm_conditional(std::span<const Token> prefix) const {
    require(prefix.size() < length_, ErrorCode::length_mismatch, "prefix must be shorter than the model length");
    std::vector<Token> seq(length_, vocab_.mask_id);
    std::copy(prefix.begin(), prefix.end(), seq.begin());
    const Index next = prefix.size();
    return predict(TokenSeq(std::move(seq)), std::span<const Index>(&next, 1)).front();
  }

  /// Monte Carlo estimate of the masked-diffusion NLL bound, with t drawn uniformly from [t_min, 1].
  ///
  /// The 1/t weight diverges at t = 0; truncating at t_min drops the (0, t_min) slice of the integral.
  NllEstimate nll_bound(const TokenSeq& z0, std::size_t draws, std::uint64_t seed, double t_min = kDefaultTMin,
                        std::uint64_t stream = 0) const {
    require(draws >= 1, ErrorCode::invalid_argument, "nll_bound needs at least one draw");
    require(z0.size() == length_ && z0.mask_free(vocab_), ErrorCode::invalid_argument,
            "nll_bound needs a mask-free sequence of the model length");
    require(t_min > 0.0 && t_min < 1.0, ErrorCode::invalid_argument, "t_min must lie in (0,1)");
    std::vector<double> samples(draws);
    for (std::size_t i = 0; i < draws; ++i) {
      Rng rng(seed, stream, static_cast<std::uint32_t>(i));
      const double t = t_min + (1.0 - t_min) * rng.uniform();
      TokenSeq zt = forward_mask(z0, t, vocab_.mask_id, rng);
      auto targets = masked_positions(zt, vocab_);
      double loss = 0.0;
      if (!targets.empty()) {
        auto dists = predict(zt, targets);
        for (std::size_t k = 0; k < targets.size(); ++k)
          loss -= std::log(dists[k][static_cast<std::size_t>(z0[targets[k]])]);
      }
      samples[i] = (1.0 - t_min) * loss / t;
    }
    NllEstimate est;
    est.draws = draws;
    est.value = mean(samples);
    est.stderr_ = draws > 1 ? stddev(samples, 1) / std::sqrt(static_cast<double>(draws)) : 0.0;
    return est;
  }

  nlohmann::json to_json() const {
    nlohmann::json seqs = nlohmann::json::array();
    for (const auto& c : components_) seqs.push_back(c.tokens());
    nlohmann::json j = {
        {"format", "memex.toymodel/1"}, {"vocab_size", vocab_.size}, {"mask_id", vocab_.mask_id},
        {"eta", eta_},   {"length", length_},   {"sequences", seqs},   {"weights", weights_},
    };
    j["content_hash"] = hex64(fnv1a64(j.dump()));
    return j;
  }

  std::string content_hash() const { return to_json()["content_hash"].get<std::string>(); }

  friend PosteriorModel fit(const Corpus& corpus, double eta, const VocabSpec& vocab);

 private:
  PosteriorModel() = default;

  /// log w_j + sum over observed positions of the log emission probability (unnormalized).
  std::vector<double> log_weights(const TokenSeq& observed) const {
    check_observed(observed);
    std::vector<Index> pos;
    std::vector<Token> tok;
    for (Index l = 0; l < length_; ++l)
      if (observed[l] != vocab_.mask_id) {
        pos.push_back(l);
        tok.push_back(observed[l]);
      }
    std::vector<double> lw(log_prior_);
    const double base = static_cast<double>(pos.size()) * log_miss_;
    const double gain = log_hit_ - log_miss_;
    for (std::size_t j = 0; j < lw.size(); ++j) {
      const Token* row = flat_.data() + j * length_;
      std::size_t matches = 0;
      for (std::size_t i = 0; i < pos.size(); ++i) matches += row[pos[i]] == tok[i];
      lw[j] += base + static_cast<double>(matches) * gain;
    }
    return lw;
  }

  void check_observed(const TokenSeq& observed) const {
    if (observed.size() != length_)
      fail(ErrorCode::length_mismatch,
           "observed length " + std::to_string(observed.size()) + " != model length " + std::to_string(length_));
  }

  VocabSpec vocab_;
  double eta_ = kDefaultEta;
  std::size_t length_ = 0;
  std::vector<TokenSeq> components_;
  std::vector<Token> flat_;  // components_ row-major, C x L
  std::vector<double> weights_;
  std::vector<double> log_prior_;
  double hit_ = 0.0, miss_ = 0.0, log_hit_ = 0.0, log_miss_ = 0.0;
};

/// Builds the exact posterior model. Identical sequences are merged with their weights summed.
inline PosteriorModel fit(const Corpus& corpus, double eta, const VocabSpec& vocab) {
  vocab.validate();
  require(!corpus.sequences.empty(), ErrorCode::invalid_argument, "corpus is empty");
  require(eta > 0.0 && eta < 1.0, ErrorCode::invalid_argument, "eta must lie strictly inside (0,1)");
  require(corpus.weights.empty() || corpus.weights.size() == corpus.sequences.size(), ErrorCode::invalid_argument,
          "one weight per sequence");
  const std::size_t length = corpus.sequences.front().size();
  require(length >= 1, ErrorCode::invalid_argument, "sequences must be nonempty");

  PosteriorModel m;
  m.vocab_ = vocab;
  m.eta_ = eta;
  m.length_ = length;
  std::map<std::vector<Token>, std::size_t> seen;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& s = corpus.sequences[i];
    require(s.size() == length, ErrorCode::length_mismatch, "ragged corpus: sequence " + std::to_string(i));
    for (Token t : s)
      require(vocab.is_ordinary(t), ErrorCode::invalid_argument,
              "sequence " + std::to_string(i) + " has token outside the vocabulary");
    const double w = corpus.weight(i);
    require(std::isfinite(w) && w > 0.0, ErrorCode::invalid_argument, "weights must be positive and finite");
    auto [it, inserted] = seen.emplace(s.tokens(), m.components_.size());
    if (inserted) {
      m.components_.push_back(s);
      m.weights_.push_back(w);
    } else {
      m.weights_[it->second] += w;
    }
  }
  double total = 0.0;
  for (double w : m.weights_) total += w;
  for (double w : m.weights_) m.log_prior_.push_back(std::log(w / total));
  for (const auto& c : m.components_) m.flat_.insert(m.flat_.end(), c.begin(), c.end());

  const auto k = static_cast<double>(vocab.size);
  m.hit_ = (1.0 - eta) + eta / k;
  m.miss_ = eta / k;
  m.log_hit_ = std::log(m.hit_);
  m.log_miss_ = std::log(m.miss_);
  return m;
}

inline PosteriorModel fit(const Corpus& corpus, double eta = PosteriorModel::kDefaultEta) {
  require(!corpus.sequences.empty(), ErrorCode::invalid_argument, "corpus is empty");
  return fit(corpus, eta, VocabSpec::with_size(corpus.inferred_vocab_size()));
}

inline PosteriorModel model_from_json(const nlohmann::json& j) {
  try {
    require(j.at("format").get<std::string>() == "memex.toymodel/1", ErrorCode::parse, "unknown model format");
    Corpus c;
    for (const auto& s : j.at("sequences")) c.add(TokenSeq(s.get<std::vector<Token>>()));
    c.weights = j.at("weights").get<std::vector<double>>();
    VocabSpec vocab(j.at("vocab_size").get<std::size_t>(), j.at("mask_id").get<Token>());
    auto m = fit(c, j.at("eta").get<double>(), vocab);
    if (j.contains("content_hash"))
      require(j["content_hash"].get<std::string>() == m.content_hash(), ErrorCode::parse,
              "model artifact content hash does not match its contents");
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, std::string("malformed model artifact: ") + e.what());
  }
}

}  // namespace memex
