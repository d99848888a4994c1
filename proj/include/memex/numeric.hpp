#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "memex/error.hpp"
#include "memex/random.hpp"

namespace memex {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_sum_exp(std::span<const double> xs) {
  double hi = kNegInf;
  for (double x : xs) hi = std::max(hi, x);
  if (hi == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - hi);
  return hi + std::log(s);
}

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double sum(std::span<const double> xs) {
  CompensatedSum s;
  for (double x : xs) s.add(x);
  return s.value();
}

inline double mean(std::span<const double> xs) {
  require(!xs.empty(), ErrorCode::invalid_argument, "mean of empty sample");
  return sum(xs) / static_cast<double>(xs.size());
}

/// Standard deviation with divisor n - ddof.
inline double stddev(std::span<const double> xs, int ddof = 0) {
  require(xs.size() > static_cast<std::size_t>(ddof), ErrorCode::invalid_argument, "sample too small");
  const double m = mean(xs);
  CompensatedSum s;
  for (double x : xs) s.add((x - m) * (x - m));
  return std::sqrt(s.value() / static_cast<double>(xs.size() - static_cast<std::size_t>(ddof)));
}

/// Standard normal CDF, Phi(x) = erfc(-x / sqrt 2) / 2 using the C library's erfc.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Linear-interpolated quantile of an already sorted sample (type 7).
inline double sorted_quantile(std::span<const double> sorted, double q) {
  require(!sorted.empty(), ErrorCode::invalid_argument, "quantile of empty sample");
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  return sorted_quantile(xs, 0.5);
}

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// Nonparametric percentile bootstrap for an arbitrary statistic.
template <class Statistic>
Interval bootstrap_ci(std::span<const double> xs, Statistic stat, std::size_t resamples, Rng& rng,
                      double level = 0.95) {
  require(!xs.empty(), ErrorCode::invalid_argument, "bootstrap of empty sample");
  std::vector<double> stats;
  stats.reserve(resamples);
  std::vector<double> buf(xs.size());
  for (std::size_t b = 0; b < resamples; ++b) {
    for (auto& v : buf) v = xs[static_cast<std::size_t>(rng.below(xs.size()))];
    stats.push_back(stat(std::span<const double>(buf)));
  }
  std::sort(stats.begin(), stats.end());
  const double alpha = (1.0 - level) / 2.0;
  return {sorted_quantile(stats, alpha), sorted_quantile(stats, 1.0 - alpha)};
}

/// Percentile bootstrap of the mean; resamples are summed on the fly.
inline Interval bootstrap_mean_ci(std::span<const double> xs, std::size_t resamples, Rng& rng, double level = 0.95) {
  require(!xs.empty(), ErrorCode::invalid_argument, "bootstrap of empty sample");
  std::vector<double> stats;
  stats.reserve(resamples);
  for (std::size_t b = 0; b < resamples; ++b) {
    CompensatedSum s;
    for (std::size_t i = 0; i < xs.size(); ++i) s.add(xs[static_cast<std::size_t>(rng.below(xs.size()))]);
    stats.push_back(s.value() / static_cast<double>(xs.size()));
  }
  std::sort(stats.begin(), stats.end());
  const double alpha = (1.0 - level) / 2.0;
  return {sorted_quantile(stats, alpha), sorted_quantile(stats, 1.0 - alpha)};
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorCode::invalid_argument, "pearson needs paired samples");
  const double mx = mean(x), my = mean(y);
  CompensatedSum sxy, sxx, syy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy.add((x[i] - mx) * (y[i] - my));
    sxx.add((x[i] - mx) * (x[i] - mx));
    syy.add((y[i] - my) * (y[i] - my));
  }
  return sxy.value() / std::sqrt(sxx.value() * syy.value());
}

struct RankTest {
  double u = 0.0;        // Mann-Whitney U of the first sample
  double z = 0.0;        // normal approximation with tie correction
  double p_value = 1.0;  // one-sided: first sample stochastically larger
};

/// One-sided Mann-Whitney U test that `a` tends to exceed `b`.
inline RankTest mann_whitney_greater(std::span<const double> a, std::span<const double> b) {
  require(!a.empty() && !b.empty(), ErrorCode::invalid_argument, "rank test needs two nonempty samples");
  struct Item {
    double v;
    int group;
  };
  std::vector<Item> all;
  for (double v : a) all.push_back({v, 0});
  for (double v : b) all.push_back({v, 1});
  std::sort(all.begin(), all.end(), [](const Item& x, const Item& y) { return x.v < y.v; });
  const double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size());
  const double n = n1 + n2;
  double rank_sum = 0.0, tie_term = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].v == all[i].v) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (all[k].group == 0) rank_sum += avg_rank;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  RankTest r;
  r.u = rank_sum - n1 * (n1 + 1.0) / 2.0;
  const double mu = n1 * n2 / 2.0;
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  r.z = var > 0 ? (r.u - mu - 0.5) / std::sqrt(var) : 0.0;
  r.p_value = var > 0 ? 1.0 - normal_cdf(r.z) : (r.u > mu ? 0.0 : 1.0);
  return r;
}

/// FNV-1a 64-bit digest, rendered as 16 hex digits.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Shortest round-tripping text for a double (%.17g), "inf"/"-inf"/"nan" spelled out.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

}  // namespace memex
