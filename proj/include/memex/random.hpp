#pragma once

// Counter-based random streams (Philox4x32-10).
//
// A stream is fully determined by (seed, stream id, trial index), so trial i
// draws the same numbers no matter which worker runs it or in what order.

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "memex/error.hpp"

namespace memex {

class Philox {
 public:
  using result_type = std::uint32_t;

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  Philox(std::uint64_t seed, std::uint64_t stream, std::uint32_t trial)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        counter_{0, trial, static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)} {}

  result_type operator()() {
    if (used_ == 4) refill();
    return block_[used_++];
  }

  std::uint64_t next_u64() {
    std::uint64_t hi = (*this)();
    std::uint64_t lo = (*this)();
    return (hi << 32) | lo;
  }

  /// Uniform on the open interval (0, 1) with 53-bit resolution.
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  /// Uniform integer in [0, n) by rejection, unbiased.
  std::uint64_t below(std::uint64_t n) {
    require(n > 0, ErrorCode::invalid_argument, "below(0)");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// One Philox4x32-10 block for an explicit key and counter.
  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 2> key, std::array<std::uint32_t, 4> ctr) {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += kW0;
      key[1] += kW1;
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;

  void refill() {
    block_ = block(key_, counter_);
    ++counter_[0];
    used_ = 0;
  }

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
};

using Rng = Philox;

/// Reserved trial index for auxiliary draws (bootstrap resampling, screening) of a stream.
inline constexpr std::uint32_t kAuxTrial = 0xFFFFFFFFu;

/// Mixes a 64-bit value; used to derive stream ids from structured keys.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_stream(std::uint64_t parent, std::uint64_t child) { return mix64(parent ^ mix64(child)); }

/// Draws from a categorical distribution by inverse CDF; probs need not be exactly normalized.
inline std::size_t sample_categorical(Rng& rng, std::span<const double> probs) {
  double total = 0.0;
  for (double p : probs) total += p;
  require(total > 0.0, ErrorCode::invalid_argument, "categorical with zero mass");
  const double u = rng.uniform() * total;
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last = i;
    if (u < acc) return i;
  }
  return last;
}

/// k distinct elements of `items`, uniformly, in draw order (partial Fisher-Yates).
template <class T>
std::vector<T> sample_without_replacement(Rng& rng, std::vector<T> items, std::size_t k) {
  require(k <= items.size(), ErrorCode::invalid_argument, "sample size exceeds population");
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.below(items.size() - i));
    std::swap(items[i], items[j]);
  }
  items.resize(k);
  return items;
}

}  // namespace memex
