#pragma once

// Shared vocabulary, sequence, mask, partition and time-grid types.
//
// Indices are 0-based everywhere in the library and in every file format.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "memex/error.hpp"

namespace memex {

using Token = std::int32_t;
using Index = std::size_t;

struct VocabSpec {
  std::size_t size = 0;  // K ordinary tokens 0..K-1
  Token mask_id = -1;

  VocabSpec() = default;
  VocabSpec(std::size_t k, Token mask) : size(k), mask_id(mask) { validate(); }

  /// Conventional layout: ordinary tokens 0..K-1, mask sentinel K.
  static VocabSpec with_size(std::size_t k) { return VocabSpec(k, static_cast<Token>(k)); }

  void validate() const {
    require(size >= 2, ErrorCode::invalid_argument, "vocabulary needs K >= 2");
    require(mask_id < 0 || static_cast<std::size_t>(mask_id) >= size, ErrorCode::invalid_argument,
            "mask sentinel collides with an ordinary token id");
  }

  bool is_ordinary(Token t) const { return t >= 0 && static_cast<std::size_t>(t) < size; }
  bool is_mask(Token t) const { return t == mask_id; }

  friend bool operator==(const VocabSpec&, const VocabSpec&) = default;
};

class TokenSeq {
 public:
  TokenSeq() = default;
  explicit TokenSeq(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}
  TokenSeq(std::initializer_list<Token> tokens) : tokens_(tokens) {}

  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }
  Token operator[](Index i) const { return tokens_[i]; }
  Token& operator[](Index i) { return tokens_[i]; }
  auto begin() const { return tokens_.begin(); }
  auto end() const { return tokens_.end(); }
  const std::vector<Token>& tokens() const { return tokens_; }
  std::span<const Token> view() const { return tokens_; }

  void validate(const VocabSpec& vocab) const {
    require(!tokens_.empty(), ErrorCode::invalid_argument, "sequence must be nonempty");
    for (Token t : tokens_) {
      require(vocab.is_ordinary(t) || vocab.is_mask(t), ErrorCode::invalid_argument,
              "token id " + std::to_string(t) + " outside vocabulary");
    }
  }

  bool mask_free(const VocabSpec& vocab) const {
    return std::none_of(tokens_.begin(), tokens_.end(), [&](Token t) { return vocab.is_mask(t); });
  }

  /// Tokens at the given positions, in the given order.
  std::vector<Token> restrict_to(std::span<const Index> positions) const {
    std::vector<Token> out;
    out.reserve(positions.size());
    for (Index i : positions) out.push_back(tokens_.at(i));
    return out;
  }

  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;

 private:
  std::vector<Token> tokens_;
};

/// Masked index set M over a sequence of length L, kept sorted and unique.
class MaskPattern {
 public:
  MaskPattern() = default;
  MaskPattern(std::size_t length, std::vector<Index> masked) : length_(length), masked_(std::move(masked)) {
    std::sort(masked_.begin(), masked_.end());
    require(std::adjacent_find(masked_.begin(), masked_.end()) == masked_.end(), ErrorCode::invalid_argument,
            "duplicate index in mask");
    require(masked_.empty() || masked_.back() < length_, ErrorCode::invalid_argument, "mask index out of range");
    flags_.assign(length_, false);
    for (Index i : masked_) flags_[i] = true;
  }

  /// Contiguous suffix [begin, length).
  static MaskPattern suffix(std::size_t length, std::size_t begin) {
    std::vector<Index> idx(length - std::min(begin, length));
    std::iota(idx.begin(), idx.end(), begin);
    return MaskPattern(length, std::move(idx));
  }

  static MaskPattern range(std::size_t length, std::size_t begin, std::size_t end) {
    std::vector<Index> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    return MaskPattern(length, std::move(idx));
  }

  std::size_t length() const { return length_; }
  std::size_t count() const { return masked_.size(); }
  bool empty() const { return masked_.empty(); }
  const std::vector<Index>& masked() const { return masked_; }
  bool contains(Index i) const { return i < length_ && flags_[i]; }

  std::vector<Index> observed() const {
    std::vector<Index> out;
    out.reserve(length_ - masked_.size());
    for (Index i = 0; i < length_; ++i)
      if (!flags_[i]) out.push_back(i);
    return out;
  }

  /// z with every masked position replaced by the sentinel.
  TokenSeq apply(const TokenSeq& z, Token mask_id) const {
    require(z.size() == length_, ErrorCode::length_mismatch, "mask length differs from sequence length");
    std::vector<Token> out(z.begin(), z.end());
    for (Index i : masked_) out[i] = mask_id;
    return TokenSeq(std::move(out));
  }

  friend bool operator==(const MaskPattern& a, const MaskPattern& b) {
    return a.length_ == b.length_ && a.masked_ == b.masked_;
  }

 private:
  std::size_t length_ = 0;
  std::vector<Index> masked_;
  std::vector<bool> flags_;
};

/// Permutation of the masked indices giving the order of recovery.
struct RecoveryOrder {
  std::vector<Index> order;

  static RecoveryOrder left_to_right(const MaskPattern& mask) { return {mask.masked()}; }

  void validate(const MaskPattern& mask) const {
    std::vector<Index> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    require(sorted == mask.masked(), ErrorCode::incompatible_partition, "recovery order is not a permutation of M");
  }
};

/// Ordered disjoint nonempty chunks whose union is the masked set.
struct Partition {
  std::vector<std::vector<Index>> chunks;

  std::size_t size() const { return chunks.size(); }

  std::vector<Index> flatten() const {
    std::vector<Index> out;
    for (const auto& c : chunks) out.insert(out.end(), c.begin(), c.end());
    return out;
  }

  std::vector<Index> sorted_indices() const {
    auto out = flatten();
    std::sort(out.begin(), out.end());
    return out;
  }

  void validate(const MaskPattern& mask) const {
    for (const auto& c : chunks) require(!c.empty(), ErrorCode::incompatible_partition, "empty chunk");
    auto all = sorted_indices();
    require(std::adjacent_find(all.begin(), all.end()) == all.end(), ErrorCode::incompatible_partition,
            "chunks overlap");
    require(all == mask.masked(), ErrorCode::incompatible_partition, "chunks do not cover the mask exactly");
  }

  /// Chunks are consecutive slices of the order (chunk-internal order ignored).
  bool respects(const RecoveryOrder& order) const {
    std::size_t pos = 0;
    for (const auto& c : chunks) {
      if (pos + c.size() > order.order.size()) return false;
      std::vector<Index> a(c.begin(), c.end());
      std::vector<Index> b(order.order.begin() + static_cast<std::ptrdiff_t>(pos),
                           order.order.begin() + static_cast<std::ptrdiff_t>(pos + c.size()));
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      if (a != b) return false;
      pos += c.size();
    }
    return pos == order.order.size();
  }

  friend bool operator==(const Partition&, const Partition&) = default;
};

/// Contiguous split of the order into n chunks; the remainder goes to the earliest chunks.
inline Partition even_split(const RecoveryOrder& order, std::size_t n) {
  const std::size_t m = order.order.size();
  require(n >= 1 && n <= std::max<std::size_t>(m, 1), ErrorCode::invalid_resolution,
          "chunk count must lie in [1, |M|]");
  Partition p;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t len = m / n + (i < m % n ? 1 : 0);
    p.chunks.emplace_back(order.order.begin() + static_cast<std::ptrdiff_t>(pos),
                          order.order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return p;
}

/// Splits the largest chunk (earliest on ties) into two halves, the first half taking the extra element.
inline Partition split_one(const Partition& p) {
  auto it = std::max_element(p.chunks.begin(), p.chunks.end(),
                             [](const auto& a, const auto& b) { return a.size() < b.size(); });
  require(it != p.chunks.end() && it->size() >= 2, ErrorCode::invalid_argument, "partition is already per-token");
  Partition out;
  for (auto c = p.chunks.begin(); c != p.chunks.end(); ++c) {
    if (c != it) {
      out.chunks.push_back(*c);
      continue;
    }
    std::size_t half = (c->size() + 1) / 2;
    out.chunks.emplace_back(c->begin(), c->begin() + static_cast<std::ptrdiff_t>(half));
    out.chunks.emplace_back(c->begin() + static_cast<std::ptrdiff_t>(half), c->end());
  }
  return out;
}

/// Canonical chain P_1 ⊑ ... ⊑ P_|M|, starting from `coarse` and splitting one chunk at a time.
inline std::vector<Partition> refinement_chain(const Partition& coarse, std::size_t finest) {
  std::vector<Partition> chain{coarse};
  while (chain.back().size() < finest) chain.push_back(split_one(chain.back()));
  return chain;
}

inline std::vector<Partition> refinement_chain(const RecoveryOrder& order) {
  return refinement_chain(even_split(order, 1), order.order.size());
}

/// True iff every chunk of `coarse` is the union of consecutive chunks of `fine`.
inline bool is_refinement(const Partition& fine, const Partition& coarse) {
  require(fine.sorted_indices() == coarse.sorted_indices(), ErrorCode::incompatible_partition,
          "partitions cover different index sets");
  std::size_t f = 0;
  for (const auto& chunk : coarse.chunks) {
    std::vector<Index> target(chunk.begin(), chunk.end());
    std::sort(target.begin(), target.end());
    std::vector<Index> acc;
    while (acc.size() < target.size() && f < fine.chunks.size()) {
      acc.insert(acc.end(), fine.chunks[f].begin(), fine.chunks[f].end());
      ++f;
    }
    std::sort(acc.begin(), acc.end());
    if (acc != target) return false;
  }
  return f == fine.chunks.size();
}

// ---------------------------------------------------------------------------
// Time grids
// ---------------------------------------------------------------------------

/// Linear grid t_i = 1 - i/N, held as integer numerators over N so step sizes are exact.
class TimeGrid {
 public:
  std::size_t resolution() const { return n_; }
  std::size_t points() const { return n_ + 1; }

  /// t_i computed once from the closed form, never accumulated.
  double time(std::size_t i) const { return 1.0 - static_cast<double>(i) / static_cast<double>(n_); }
  std::size_t numerator(std::size_t i) const { return n_ - i; }

  std::vector<double> times() const {
    std::vector<double> out(points());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = time(i);
    return out;
  }

  friend TimeGrid make_linear_grid(std::size_t n);

 private:
  explicit TimeGrid(std::size_t n) : n_(n) {}
  std::size_t n_ = 1;
};

inline TimeGrid make_linear_grid(std::size_t n) {
  require(n >= 1, ErrorCode::invalid_resolution, "grid resolution must be >= 1");
  return TimeGrid(n);
}

enum class StepRule {
  literal_floor,  // k = floor(...), possibly 0 at intermediate steps
  at_least_one,   // k >= 1 while tokens remain
};

/// k = floor(num_masked * (1 - s/t)); at s = 0 every remaining token is recovered.
inline std::size_t tokens_to_recover(double t, double s, std::size_t num_masked,
                                     StepRule rule = StepRule::literal_floor) {
  require(s >= 0.0 && t <= 1.0 && s < t, ErrorCode::invalid_interval, "need 0 <= s < t <= 1");
  if (s == 0.0) return num_masked;
  // Relative slack absorbs binary rounding of grid points such as 0.7/0.6.
  const double raw = static_cast<double>(num_masked) * (1.0 - s / t);
  auto k = static_cast<std::size_t>(std::floor(raw + 1e-9 * std::max(1.0, raw)));
  k = std::min(k, num_masked);
  if (rule == StepRule::at_least_one && num_masked > 0) k = std::max<std::size_t>(k, 1);
  return k;
}

/// Exact integer form for step i of a linear grid: floor(remaining * (t_i - t_{i+1}) / t_i).
inline std::size_t tokens_to_recover(const TimeGrid& grid, std::size_t step, std::size_t remaining,
                                     StepRule rule = StepRule::literal_floor) {
  require(step < grid.resolution(), ErrorCode::invalid_interval, "step index past the grid");
  const std::size_t t = grid.numerator(step);
  const std::size_t s = grid.numerator(step + 1);
  if (s == 0) return remaining;
  std::size_t k = remaining * (t - s) / t;
  if (rule == StepRule::at_least_one && remaining > 0) k = std::max<std::size_t>(k, 1);
  return k;
}

/// Chunk sizes realized by the grid for a mask of the given size.
inline std::vector<std::size_t> step_sizes(const TimeGrid& grid, std::size_t num_masked,
                                           StepRule rule = StepRule::literal_floor) {
  std::vector<std::size_t> out;
  std::size_t remaining = num_masked;
  for (std::size_t i = 0; i < grid.resolution(); ++i) {
    std::size_t k = tokens_to_recover(grid, i, remaining, rule);
    out.push_back(k);
    remaining -= k;
  }
  return out;
}

/// Grid resolution as configured: an explicit step count, or "max" meaning N = |M|.
class Resolution {
 public:
  static Resolution steps(std::size_t n) {
    require(n >= 1, ErrorCode::invalid_resolution, "resolution must be >= 1");
    return Resolution(n);
  }
  static Resolution max() { return Resolution(0); }

  bool is_max() const { return n_ == 0; }
  std::size_t resolve(std::size_t num_masked) const { return is_max() ? std::max<std::size_t>(num_masked, 1) : n_; }
  TimeGrid grid(std::size_t num_masked) const { return make_linear_grid(resolve(num_masked)); }

  std::string label() const { return is_max() ? "max" : std::to_string(n_); }

  static Resolution parse(const std::string& s) {
    if (s == "max" || s == "Max" || s == "per-token") return max();
    if (s == "one" || s == "One") return steps(1);
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(s, &pos);
    } catch (const std::exception&) {
      fail(ErrorCode::invalid_resolution, "cannot parse resolution '" + s + "'");
    }
    require(pos == s.size(), ErrorCode::invalid_resolution, "cannot parse resolution '" + s + "'");
    return steps(v);
  }

  friend bool operator==(const Resolution&, const Resolution&) = default;

 private:
  explicit Resolution(std::size_t n) : n_(n) {}
  std::size_t n_;
};

// ---------------------------------------------------------------------------
// Distances
// ---------------------------------------------------------------------------

inline std::size_t hamming(std::span<const Token> a, std::span<const Token> b) {
  require(a.size() == b.size(), ErrorCode::length_mismatch, "hamming needs equal lengths");
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

/// Hamming distance between two full sequences restricted to the masked positions.
inline std::size_t hamming(const TokenSeq& a, const TokenSeq& b, const MaskPattern& mask) {
  require(a.size() == mask.length() && b.size() == mask.length(), ErrorCode::length_mismatch,
          "sequence length differs from mask length");
  std::size_t d = 0;
  for (Index i : mask.masked()) d += a[i] != b[i];
  return d;
}

}  // namespace memex
