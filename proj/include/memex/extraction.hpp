#pragma once

// Memorization estimators: trajectory probabilities, R-trial means, query
// budgets, exact and epsilon-relaxed hit rates, Hamming statistics and the
// Gaussian shortcut for the relaxed rate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "memex/core.hpp"
#include "memex/engine.hpp"
#include "memex/numeric.hpp"
#include "memex/parallel.hpp"
#include "memex/predictor.hpp"
#include "memex/random.hpp"
#include "memex/samplers.hpp"

namespace memex {

/// A fresh uniformly random mask of round(ratio * L) positions (at least one) per trial.
struct RandomMask {
  double ratio = 0.25;

  std::size_t count(std::size_t length) const {
    require(ratio > 0.0 && ratio <= 1.0, ErrorCode::invalid_argument, "mask ratio must lie in (0,1]");
    return std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(ratio * static_cast<double>(length))), 1,
                                   length);
  }
};

using MaskSource = std::variant<MaskPattern, RandomMask>;

inline MaskPattern draw_mask(const MaskSource& source, std::size_t length, Rng& rng) {
  if (const auto* fixed = std::get_if<MaskPattern>(&source)) return *fixed;
  const auto& random = std::get<RandomMask>(source);
  std::vector<Index> all(length);
  for (Index i = 0; i < length; ++i) all[i] = i;
  return MaskPattern(length, sample_without_replacement(rng, std::move(all), random.count(length)));
}

struct RunOptions {
  std::size_t threads = 1;
  std::uint64_t stream = 0;  // distinguishes examples sharing one seed
  std::size_t bootstrap_resamples = 1000;
  bool keep_trials = false;
  StepRule step_rule = StepRule::literal_floor;
};

struct PzEstimate {
  double mean = 0.0;  // (1/R) * sum of per-trial p_z, linear domain
  std::size_t trials = 0;
  double std_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::vector<double> per_trial;  // filled when RunOptions::keep_trials
};

/// Single-trial p_z: exp of the summed log ground-truth conditionals.
inline double pz_from_trajectory(const TrajectoryRecord& traj) {
  require(traj.complete(), ErrorCode::invalid_argument, "trajectory is incomplete");
  return std::exp(traj.log_pz);
}

/// Rng for trial `trial` of a run; the mask (when random) is drawn from it before decoding.
inline Rng trial_rng(const SamplerConfig& sampler, const RunOptions& opts, std::size_t trial) {
  return Rng(sampler.seed, opts.stream, static_cast<std::uint32_t>(trial));
}

inline TrajectoryRecord run_trial(const Predictor& model, const TokenSeq& z, const MaskSource& mask,
                                  const Resolution& resolution, const SamplerConfig& sampler, const RunOptions& opts,
                                  std::size_t trial, bool track_truth) {
  Rng rng = trial_rng(sampler, opts, trial);
  MaskPattern m = draw_mask(mask, z.size(), rng);
  const TimeGrid grid = resolution.grid(m.count());
  return reverse_generate(model, z, m, grid, sampler, rng, {opts.step_rule, track_truth});
}

/// Summarizes per-trial probabilities: mean, standard error and percentile-bootstrap 95% interval.
inline PzEstimate summarize_trials(std::vector<double> values, const SamplerConfig& sampler, const RunOptions& opts) {
  PzEstimate est;
  est.trials = values.size();
  est.mean = mean(values);
  est.std_error = values.size() > 1 ? stddev(values, 1) / std::sqrt(static_cast<double>(values.size())) : 0.0;
  if (opts.bootstrap_resamples > 0 && est.std_error > 0.0) {
    Rng boot(sampler.seed, opts.stream, kAuxTrial);
    Interval ci = bootstrap_mean_ci(values, opts.bootstrap_resamples, boot);
    est.ci_low = ci.low;
    est.ci_high = ci.high;
  } else {
    est.ci_low = est.ci_high = est.mean;
  }
  // Percentile intervals of a skewed sample can sit just off the mean; keep the documented ordering.
  est.ci_low = std::clamp(std::min(est.ci_low, est.mean), 0.0, 1.0);
  est.ci_high = std::clamp(std::max(est.ci_high, est.mean), 0.0, 1.0);
  if (opts.keep_trials) est.per_trial = std::move(values);
  return est;
}

/// p_hat_z = (1/R) * sum_i p_z^(i) over R independent trajectories.
inline PzEstimate estimate_pz(const Predictor& model, const TokenSeq& z, const MaskSource& mask,
                              const Resolution& resolution, const SamplerConfig& sampler, std::size_t trials,
                              const RunOptions& opts = {}) {
  require(trials >= 1, ErrorCode::invalid_argument, "estimate_pz needs R >= 1");
  std::vector<double> values(trials);
  parallel_for(trials, opts.threads, [&](std::size_t i) {
    values[i] = run_trial(model, z, mask, resolution, sampler, opts, i, true).pz();
  });
  return summarize_trials(std::move(values), sampler, opts);
}

struct HitRate {
  std::size_t hits = 0;
  std::size_t trials = 0;

  double rate() const { return trials ? static_cast<double>(hits) / static_cast<double>(trials) : 0.0; }
  /// Binomial standard error sqrt(p(1-p)/R).
  double std_error() const {
    const double p = rate();
    return trials ? std::sqrt(p * (1.0 - p) / static_cast<double>(trials)) : 0.0;
  }
};

/// Hamming distance on M of every unconstrained generation, indexed by trial.
inline std::vector<std::size_t> generation_distances(const Predictor& model, const TokenSeq& z,
                                                     const MaskSource& mask, const Resolution& resolution,
                                                     const SamplerConfig& sampler, std::size_t trials,
                                                     const RunOptions& opts = {}) {
  require(trials >= 1, ErrorCode::invalid_argument, "need R >= 1 generations");
  std::vector<std::size_t> out(trials);
  parallel_for(trials, opts.threads, [&](std::size_t i) {
    out[i] = run_trial(model, z, mask, resolution, sampler, opts, i, false).hamming;
  });
  return out;
}

inline HitRate hit_rate_within(std::span<const std::size_t> distances, std::size_t eps) {
  HitRate r;
  r.trials = distances.size();
  r.hits = static_cast<std::size_t>(std::count_if(distances.begin(), distances.end(),
                                                  [eps](std::size_t d) { return d <= eps; }));
  return r;
}

/// Fraction of R generations reproducing z on M exactly. An empty mask is a vacuous success.
inline HitRate empirical_hit_rate(const Predictor& model, const TokenSeq& z, const MaskSource& mask,
                                  const Resolution& resolution, const SamplerConfig& sampler, std::size_t trials,
                                  const RunOptions& opts = {}) {
  auto d = generation_distances(model, z, mask, resolution, sampler, trials, opts);
  return hit_rate_within(d, 0);
}

/// (1/R) * sum 1[hamming <= eps]; eps = 0 is the exact hit rate on the same trials.
inline HitRate eps_hit_rate(const Predictor& model, const TokenSeq& z, const MaskSource& mask,
                            const Resolution& resolution, const SamplerConfig& sampler, std::size_t trials,
                            std::size_t eps, const RunOptions& opts = {}) {
  auto d = generation_distances(model, z, mask, resolution, sampler, trials, opts);
  return hit_rate_within(d, eps);
}

// ---------------------------------------------------------------------------
// Query budgets
// ---------------------------------------------------------------------------

/// 1 - (1 - p_z)^n, computed without cancellation.
inline double success_probability(double pz, std::size_t n) {
  if (pz >= 1.0) return n >= 1 ? 1.0 : 0.0;
  if (pz <= 0.0) return 0.0;
  return -std::expm1(static_cast<double>(n) * std::log1p(-pz));
}

struct BudgetResult {
  std::optional<std::size_t> n;  // empty when unbounded (p_z = 0)
  double target_p = 0.0;
  double source_pz = 0.0;

  bool unbounded() const { return !n.has_value(); }
};

/// Smallest n with 1 - (1 - p_z)^n >= p.
inline BudgetResult required_queries(double pz, double p) {
  require(p > 0.0 && p < 1.0, ErrorCode::invalid_argument, "target p must lie in (0,1)");
  require(pz >= 0.0 && pz <= 1.0, ErrorCode::invalid_argument, "p_z must lie in [0,1]");
  BudgetResult r{std::nullopt, p, pz};
  if (pz == 0.0) return r;
  if (pz == 1.0 || success_probability(pz, 1) >= p) {
    r.n = 1;
    return r;
  }
  const double guess = std::log1p(-p) / std::log1p(-pz);
  require(guess < 1e18, ErrorCode::invalid_argument, "query budget overflows");
  auto n = static_cast<std::size_t>(std::ceil(guess));
  n = std::max<std::size_t>(n, 1);
  while (n > 1 && success_probability(pz, n - 1) >= p) --n;
  while (success_probability(pz, n) < p) ++n;
  r.n = n;
  return r;
}

inline bool is_discoverable(double pz, std::size_t n, double p) { return success_probability(pz, n) >= p; }

/// Examples with 1 - (1 - p_hat_z)^n >= p.
inline std::size_t discoverable_count(std::span<const double> pz_values, std::size_t n, double p) {
  require(n >= 1, ErrorCode::invalid_argument, "query budget must be >= 1");
  return static_cast<std::size_t>(
      std::count_if(pz_values.begin(), pz_values.end(), [&](double v) { return is_discoverable(v, n, p); }));
}

inline std::size_t discoverable_count(std::span<const PzEstimate> estimates, std::size_t n, double p) {
  std::vector<double> v;
  v.reserve(estimates.size());
  for (const auto& e : estimates) v.push_back(e.mean);
  return discoverable_count(std::span<const double>(v), n, p);
}

// ---------------------------------------------------------------------------
// Hamming statistics and the Gaussian shortcut
// ---------------------------------------------------------------------------

struct HammingStats {
  double mu = 0.0;
  double sigma = 0.0;  // population standard deviation
  std::size_t count = 0;
  std::vector<std::size_t> histogram;  // histogram[d] = trials at distance d

  /// Empirical P(d <= eps).
  double cdf(double eps) const {
    if (eps < 0) return 0.0;
    std::size_t acc = 0;
    for (std::size_t d = 0; d < histogram.size() && static_cast<double>(d) <= eps; ++d) acc += histogram[d];
    return static_cast<double>(acc) / static_cast<double>(count);
  }
};

inline HammingStats hamming_stats(std::span<const std::size_t> distances) {
  require(!distances.empty(), ErrorCode::invalid_argument, "hamming_stats of empty trial set");
  HammingStats s;
  s.count = distances.size();
  const std::size_t hi = *std::max_element(distances.begin(), distances.end());
  s.histogram.assign(hi + 1, 0);
  for (std::size_t d : distances) ++s.histogram[d];
  // Moments from the histogram so the two views agree exactly.
  CompensatedSum m1;
  for (std::size_t d = 0; d < s.histogram.size(); ++d)
    m1.add(static_cast<double>(d) * static_cast<double>(s.histogram[d]));
  s.mu = m1.value() / static_cast<double>(s.count);
  CompensatedSum m2;
  for (std::size_t d = 0; d < s.histogram.size(); ++d) {
    const double dev = static_cast<double>(d) - s.mu;
    m2.add(dev * dev * static_cast<double>(s.histogram[d]));
  }
  s.sigma = std::sqrt(m2.value() / static_cast<double>(s.count));
  return s;
}

/// Phi((eps - mu) / sigma); with sigma = 0 the step function at mu.
inline double gaussian_eps_approx(double mu, double sigma, double eps) {
  require(sigma >= 0.0, ErrorCode::invalid_argument, "sigma must be >= 0");
  if (sigma == 0.0) return eps >= mu ? 1.0 : 0.0;
  return normal_cdf((eps - mu) / sigma);
}

inline double gaussian_eps_approx(const HammingStats& stats, double eps) {
  return gaussian_eps_approx(stats.mu, stats.sigma, eps);
}

/// Integer distances in the central regime [mu - width*sigma, mu + width*sigma].
inline std::vector<std::size_t> central_regime(const HammingStats& stats, double width = 2.0) {
  const double lo = std::max(0.0, std::ceil(stats.mu - width * stats.sigma));
  const double hi = std::floor(stats.mu + width * stats.sigma);
  std::vector<std::size_t> out;
  for (double e = lo; e <= hi; e += 1.0) out.push_back(static_cast<std::size_t>(e));
  return out;
}

/// sup over the central regime of |empirical CDF - Phi((eps - mu)/sigma)|, with mu, sigma from `fit`.
inline double central_sup_distance(const HammingStats& empirical, const HammingStats& fit, double width = 2.0) {
  double sup = 0.0;
  for (std::size_t e : central_regime(empirical, width))
    sup = std::max(sup, std::abs(empirical.cdf(static_cast<double>(e)) -
                                 gaussian_eps_approx(fit, static_cast<double>(e))));
  return sup;
}

/// sup over the central regime of `reference` of |Phi_a - Phi_b| for two Gaussian fits.
inline double central_fit_distance(const HammingStats& a, const HammingStats& b, const HammingStats& reference,
                                   double width = 2.0) {
  double sup = 0.0;
  for (std::size_t e : central_regime(reference, width))
    sup = std::max(sup, std::abs(gaussian_eps_approx(a, static_cast<double>(e)) -
                                 gaussian_eps_approx(b, static_cast<double>(e))));
  return sup;
}

struct NormalityCheck {
  double sup_distance = 0.0;
  double tolerance = 0.08;
  bool passes = false;
};

/// Central-regime agreement between the empirical distance CDF and its own Gaussian fit.
inline NormalityCheck normality_check(const HammingStats& stats, double tolerance = 0.08, double width = 2.0) {
  NormalityCheck c;
  c.tolerance = tolerance;
  c.sup_distance = stats.sigma > 0.0 ? central_sup_distance(stats, stats, width) : 1.0;
  c.passes = c.sup_distance <= tolerance;
  return c;
}

}  // namespace memex
