#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "memex/core.hpp"

namespace memex {

/// Probability vector over the K ordinary tokens.
using Distribution = std::vector<double>;

/// A conditional predictor p(z^l = v | observed tokens) for masked positions.
///
/// `observed` carries the vocabulary's mask sentinel at unobserved positions;
/// every target must be one of those positions. Implementations are read-only
/// after construction and must tolerate concurrent calls.
class Predictor {
 public:
  virtual ~Predictor() = default;

  virtual VocabSpec vocab() const = 0;

  /// Sequence length the predictor is bound to, when it has one.
  virtual std::optional<std::size_t> fixed_length() const { return std::nullopt; }

  /// Longest sequence accepted.
  virtual std::optional<std::size_t> max_length() const { return fixed_length(); }

  virtual std::vector<Distribution> predict(const TokenSeq& observed, std::span<const Index> targets) const = 0;
};

/// Corpus-independent predictor: uniform over the K ordinary tokens at every position.
class UniformPredictor final : public Predictor {
 public:
  UniformPredictor(VocabSpec vocab, std::optional<std::size_t> length = std::nullopt)
      : vocab_(vocab), length_(length) {
    vocab_.validate();
  }

  VocabSpec vocab() const override { return vocab_; }
  std::optional<std::size_t> fixed_length() const override { return length_; }

  std::vector<Distribution> predict(const TokenSeq& observed, std::span<const Index> targets) const override {
    if (length_) require(observed.size() == *length_, ErrorCode::length_mismatch, "observed length differs");
    std::vector<Distribution> out;
    out.reserve(targets.size());
    for (Index l : targets) {
      require(l < observed.size() && vocab_.is_mask(observed[l]), ErrorCode::invalid_argument,
              "target position " + std::to_string(l) + " is not masked");
      out.emplace_back(vocab_.size, 1.0 / static_cast<double>(vocab_.size));
    }
    return out;
  }

 private:
  VocabSpec vocab_;
  std::optional<std::size_t> length_;
};

/// Positions of `observed` holding the mask sentinel.
inline std::vector<Index> masked_positions(const TokenSeq& observed, const VocabSpec& vocab) {
  std::vector<Index> out;
  for (Index i = 0; i < observed.size(); ++i)
    if (vocab.is_mask(observed[i])) out.push_back(i);
  return out;
}

/// Ground-truth context z_U: z at positions in `known`, the sentinel elsewhere.
inline TokenSeq context_from(const TokenSeq& z, const std::vector<bool>& known, Token mask_id) {
  std::vector<Token> out(z.size());
  for (Index i = 0; i < z.size(); ++i) out[i] = known[i] ? z[i] : mask_id;
  return TokenSeq(std::move(out));
}

}  // namespace memex
