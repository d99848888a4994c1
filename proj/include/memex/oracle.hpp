#pragma once

// Brute-force ground truth at desk scale: exact p_z for a fixed partition,
// exact expectation over recovery paths, exhaustive monotonicity-of-recovery
// scans, refinement-chain checks and the per-token = chain-rule identity.

#include <algorithm>
#include <bit>
#include <concepts>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "memex/core.hpp"
#include "memex/engine.hpp"
#include "memex/numeric.hpp"
#include "memex/predictor.hpp"
#include "memex/samplers.hpp"

namespace memex {

using Bits = std::uint64_t;

inline Bits bits_of(std::span<const Index> idx) {
  Bits b = 0;
  for (Index i : idx) b |= Bits{1} << i;
  return b;
}

inline std::vector<Index> indices_of(Bits b) {
  std::vector<Index> out;
  while (b) {
    out.push_back(static_cast<Index>(std::countr_zero(b)));
    b &= b - 1;
  }
  return out;
}

/// log Pr(token rule emits z_l | z_C) for every l outside C, memoized per context set C.
class ConditionalTable {
 public:
  ConditionalTable(const Predictor& model, const TokenSeq& z, TokenRule rule = TokenRule::plain())
      : model_(model), z_(z), rule_(rule), vocab_(model.vocab()) {
    require(z.size() <= 64, ErrorCode::size_guard, "conditional tables index positions with 64-bit sets");
    require(z.mask_free(vocab_), ErrorCode::invalid_argument, "ground truth must be mask-free");
  }

  std::size_t length() const { return z_.size(); }
  Bits full() const { return z_.size() == 64 ? ~Bits{0} : (Bits{1} << z_.size()) - 1; }
  std::size_t queries() const { return cache_.size(); }

  double log_cond(Bits context, Index l) {
    const auto& row = row_for(context);
    return row[l];
  }

  /// Sum of per-position log conditionals over `targets` given the true tokens on `context`.
  double log_joint(Bits context, Bits targets) {
    const auto& row = row_for(context);
    double acc = 0.0;
    for (Bits b = targets; b; b &= b - 1) acc += row[static_cast<std::size_t>(std::countr_zero(b))];
    return acc;
  }

  /// Plain model probabilities at the free positions, for confidence-based selection.
  const std::vector<Distribution>& dists(Bits context) {
    row_for(context);
    return dist_cache_[context];
  }

 private:
  const std::vector<double>& row_for(Bits context) {
    auto it = cache_.find(context);
    if (it != cache_.end()) return it->second;
    const Bits free = full() & ~context;
    std::vector<Token> seq(z_.size(), vocab_.mask_id);
    for (Index i : indices_of(context)) seq[i] = z_[i];
    const auto targets = indices_of(free);
    std::vector<double> row(z_.size(), 0.0);
    std::vector<Distribution> ds;
    if (!targets.empty()) ds = model_.predict(TokenSeq(std::move(seq)), targets);
    for (std::size_t k = 0; k < targets.size(); ++k)
      row[targets[k]] = std::log(effective_probability(ds[k], rule_, z_[targets[k]]));
    dist_cache_.emplace(context, std::move(ds));
    return cache_.emplace(context, std::move(row)).first->second;
  }

  const Predictor& model_;
  TokenSeq z_;
  TokenRule rule_;
  VocabSpec vocab_;
  std::map<Bits, std::vector<double>> cache_;
  std::map<Bits, std::vector<Distribution>> dist_cache_;
};

// ---------------------------------------------------------------------------
// Exact p_z
// ---------------------------------------------------------------------------

/// log of prod_k prod_{pi in Delta_k} Pr(z_pi | z_{U_{k-1}}) with ground-truth context.
inline double exact_log_pz_fixed_partition(const Predictor& model, const TokenSeq& z, const MaskPattern& mask,
                                           const RecoveryOrder& order, const Partition& partition,
                                           const TokenRule& rule = TokenRule::plain()) {
  const VocabSpec vocab = model.vocab();
  require(z.size() == mask.length(), ErrorCode::length_mismatch, "mask length differs from sequence length");
  require(z.mask_free(vocab), ErrorCode::invalid_argument, "ground truth must be mask-free");
  order.validate(mask);
  partition.validate(mask);
  require(partition.respects(order), ErrorCode::incompatible_partition, "partition does not follow the order");
  std::vector<Token> ctx = mask.apply(z, vocab.mask_id).tokens();
  CompensatedSum acc;
  for (const auto& chunk : partition.chunks) {
    std::vector<Index> targets(chunk.begin(), chunk.end());
    std::sort(targets.begin(), targets.end());
    const auto dists = model.predict(TokenSeq(ctx), targets);
    for (std::size_t k = 0; k < targets.size(); ++k)
      acc.add(std::log(effective_probability(dists[k], rule, z[targets[k]])));
    for (Index i : targets) ctx[i] = z[i];
  }
  return acc.value();
}

inline double exact_pz_fixed_partition(const Predictor& model, const TokenSeq& z, const MaskPattern& mask,
                                       const RecoveryOrder& order, const Partition& partition,
                                       const TokenRule& rule = TokenRule::plain()) {
  return std::exp(exact_log_pz_fixed_partition(model, z, mask, order, partition, rule));
}

inline constexpr std::size_t kDefaultEnumerationGuard = 8;

inline double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

/// Exact E[p_z^(i)] over every realizable chunk-selection sequence of the sampler on `grid`.
///
/// Random selection weights each k-subset of the remaining positions by 1/C(r,k). Greedy and
/// left-to-right selection are deterministic along the ground-truth-context process.
inline double enumerate_orders_pz(const Predictor& model, const TokenSeq& z, const MaskPattern& mask,
                                  const TimeGrid& grid, PositionRule position_rule,
                                  const TokenRule& rule = TokenRule::plain(),
                                  StepRule step_rule = StepRule::literal_floor,
                                  std::size_t guard = kDefaultEnumerationGuard) {
  require(mask.count() <= guard, ErrorCode::size_guard,
          "|M| = " + std::to_string(mask.count()) + " exceeds the enumeration guard " + std::to_string(guard) +
              "; use estimate_pz for larger masks");
  require(z.size() == mask.length(), ErrorCode::length_mismatch, "mask length differs from sequence length");
  ConditionalTable table(model, z, rule);
  const Bits observed = bits_of(mask.observed());

  // Expected partial product, keyed by the recovered subset of M.
  std::map<Bits, double> states{{0, 1.0}};
  const std::size_t m = mask.count();
  std::size_t remaining = m;
  for (std::size_t step = 0; step < grid.resolution(); ++step) {
    const std::size_t k = tokens_to_recover(grid, step, remaining, step_rule);
    if (k == 0) continue;
    std::map<Bits, double> next;
    for (const auto& [done, weight] : states) {
      const Bits context = observed | done;
      const auto free = indices_of(table.full() & ~context);
      if (position_rule == PositionRule::random_uniform) {
        const double share = weight / binomial(free.size(), k);
        std::vector<bool> pick(free.size(), false);
        std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(k), true);
        do {
          Bits chunk = 0;
          for (std::size_t i = 0; i < free.size(); ++i)
            if (pick[i]) chunk |= Bits{1} << free[i];
          next[done | chunk] += share * std::exp(table.log_joint(context, chunk));
        } while (std::prev_permutation(pick.begin(), pick.end()));
      } else {
        std::vector<double> conf;
        if (position_rule == PositionRule::greedy_confidence)
          conf = detail::confidences_of(table.dists(context));
        Rng unused(0, 0, 0);
        const auto chosen = select_positions(free, conf, k, position_rule, unused);
        const Bits chunk = bits_of(chosen);
        next[done | chunk] += weight * std::exp(table.log_joint(context, chunk));
      }
    }
    states.swap(next);
    remaining -= k;
  }
  require(remaining == 0, ErrorCode::invalid_resolution, "grid finished with masked tokens left");
  CompensatedSum total;
  for (const auto& [done, weight] : states) total.add(weight);
  return total.value();
}

// ---------------------------------------------------------------------------
// Monotonicity of recovery
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultAssumptionMaxL = 8;
inline constexpr double kAssumptionTolerance = 1e-12;

struct AssumptionViolation {
  Bits smaller = 0;  // U
  Bits larger = 0;   // W, with U a strict subset
  Bits targets = 0;  // M', disjoint from W
  double log_smaller = 0.0;
  double log_larger = 0.0;

  double log_gap() const { return log_smaller - log_larger; }
  double gap() const { return std::exp(log_smaller) - std::exp(log_larger); }
};

struct AssumptionReport {
  std::size_t length = 0;
  std::size_t triples_checked = 0;
  std::vector<AssumptionViolation> violations;

  bool holds() const { return violations.empty(); }
};

/// Whether Pr(z_T | z_W) < Pr(z_T | z_U) beyond the relative tolerance (log domain).
inline bool lower_beyond_tolerance(double log_larger_ctx, double log_smaller_ctx, double tol = kAssumptionTolerance) {
  return log_larger_ctx < log_smaller_ctx - tol * std::max(1.0, std::abs(log_smaller_ctx));
}

/// Exhaustive scan of U ⊂ W ⊆ [L] and nonempty M' ⊆ [L] \ W.
///
/// Pr(z_{M'} | z_W) is the product of the per-position predictive probabilities, the
/// quantity a single parallel denoising step assigns to recovering M' from W.
inline AssumptionReport check_assumption1(const Predictor& model, const TokenSeq& z,
                                          std::size_t max_length = kDefaultAssumptionMaxL,
                                          const TokenRule& rule = TokenRule::plain()) {
  require(z.size() <= max_length, ErrorCode::size_guard,
          "L = " + std::to_string(z.size()) + " exceeds the exhaustive-check guard " + std::to_string(max_length));
  ConditionalTable table(model, z, rule);
  const Bits all = table.full();
  AssumptionReport report;
  report.length = z.size();
  for (Bits w = 0;; w = (w - all) & all) {  // every subset W of [L]
    const Bits rest = all & ~w;
    for (Bits u = (w - 1) & w;; u = (u - 1) & w) {  // strict subsets U of W
      if (u != w) {
        for (Bits t = rest; t; t = (t - 1) & rest) {  // nonempty M' in [L] \ W
          ++report.triples_checked;
          const double lw = table.log_joint(w, t);
          const double lu = table.log_joint(u, t);
          if (lower_beyond_tolerance(lw, lu)) report.violations.push_back({u, w, t, lu, lw});
        }
      }
      if (u == 0) break;
    }
    if (w == all) break;
  }
  std::sort(report.violations.begin(), report.violations.end(), [](const auto& a, const auto& b) {
    return std::tie(a.smaller, a.larger, a.targets) < std::tie(b.smaller, b.larger, b.targets);
  });
  return report;
}

// ---------------------------------------------------------------------------
// Refinement checks
// ---------------------------------------------------------------------------

enum class Verdict { holds, violated, assumption_failed };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::holds: return "holds";
    case Verdict::violated: return "violated";
    case Verdict::assumption_failed: return "assumption_failed";
  }
  return "?";
}

struct RefinementCheck {
  Verdict verdict = Verdict::holds;
  Partition fine;
  Partition coarse;
  double log_fine = 0.0;
  double log_coarse = 0.0;
  bool reversal = false;  // fine < coarse beyond tolerance
  std::size_t assumption_failures = 0;

  double gap() const { return log_fine - log_coarse; }
};

/// Context set each position of M sees under a partition, with the order of chunks.
inline std::map<Index, Bits> chunk_contexts(const MaskPattern& mask, const Partition& p) {
  std::map<Index, Bits> out;
  Bits ctx = bits_of(mask.observed());
  for (const auto& chunk : p.chunks) {
    for (Index i : chunk) out[i] = ctx;
    ctx |= bits_of(chunk);
  }
  return out;
}

/// Compares a refinement pair exactly. The relevant part of the assumption is, for every
/// masked position, that adding the extra fine-side context does not lower its conditional.
inline RefinementCheck compare_refinement(ConditionalTable& table, const MaskPattern& mask, const Partition& fine,
                                          const Partition& coarse) {
  require(is_refinement(fine, coarse), ErrorCode::incompatible_partition, "fine is not a refinement of coarse");
  RefinementCheck r;
  r.fine = fine;
  r.coarse = coarse;
  const auto cf = chunk_contexts(mask, fine);
  const auto cc = chunk_contexts(mask, coarse);
  CompensatedSum lf, lc;
  for (Index pi : mask.masked()) {
    const Bits target = Bits{1} << pi;
    const double a = table.log_joint(cf.at(pi), target);
    const double b = table.log_joint(cc.at(pi), target);
    lf.add(a);
    lc.add(b);
    if (lower_beyond_tolerance(a, b)) ++r.assumption_failures;
  }
  r.log_fine = lf.value();
  r.log_coarse = lc.value();
  r.reversal = lower_beyond_tolerance(r.log_fine, r.log_coarse);
  if (r.assumption_failures > 0)
    r.verdict = Verdict::assumption_failed;
  else
    r.verdict = r.reversal ? Verdict::violated : Verdict::holds;
  return r;
}

/// Partitions with N1 and N2 chunks: even split into N2 chunks, refined by splitting one chunk at a time.
inline RefinementCheck check_refinement_monotone(const Predictor& model, const TokenSeq& z, const MaskPattern& mask,
                                      const RecoveryOrder& order, std::size_t n1, std::size_t n2,
                                      const TokenRule& rule = TokenRule::plain()) {
  require(n1 >= n2, ErrorCode::invalid_resolution, "the finer partition needs N1 >= N2");
  order.validate(mask);
  const Partition coarse = even_split(order, n2);
  const auto chain = refinement_chain(coarse, n1);
  ConditionalTable table(model, z, rule);
  return compare_refinement(table, mask, chain.back(), coarse);
}

struct ChainReport {
  RecoveryOrder order;
  std::vector<Partition> chain;
  std::vector<double> log_pz;  // along P_1 ⊑ ... ⊑ P_|M|
  std::vector<RefinementCheck> steps;

  bool monotone() const {
    for (const auto& s : steps)
      if (s.reversal) return false;
    return true;
  }
  bool any_violation() const {
    for (const auto& s : steps)
      if (s.verdict == Verdict::violated) return true;
    return false;
  }
  bool assumption_failed() const {
    for (const auto& s : steps)
      if (s.verdict == Verdict::assumption_failed) return true;
    return false;
  }
};

/// Exact p_z along the canonical refinement chain of `order`, checking every adjacent pair.
inline ChainReport check_refinement_chain(ConditionalTable& table, const MaskPattern& mask,
                                          const RecoveryOrder& order) {
  order.validate(mask);
  ChainReport rep;
  rep.order = order;
  rep.chain = refinement_chain(order);
  for (std::size_t i = 0; i < rep.chain.size(); ++i) {
    if (i == 0) {
      const auto ctx = chunk_contexts(mask, rep.chain[0]);
      CompensatedSum acc;
      for (Index pi : mask.masked()) acc.add(table.log_joint(ctx.at(pi), Bits{1} << pi));
      rep.log_pz.push_back(acc.value());
      continue;
    }
    rep.steps.push_back(compare_refinement(table, mask, rep.chain[i], rep.chain[i - 1]));
    rep.log_pz.push_back(rep.steps.back().log_fine);
  }
  return rep;
}

inline ChainReport check_refinement_chain(const Predictor& model, const TokenSeq& z, const MaskPattern& mask,
                                          const RecoveryOrder& order, const TokenRule& rule = TokenRule::plain()) {
  ConditionalTable table(model, z, rule);
  return check_refinement_chain(table, mask, order);
}

// ---------------------------------------------------------------------------
// Per-token recovery vs the chain rule
// ---------------------------------------------------------------------------

/// A predictor that also exposes the joint log-likelihood of the observed positions.
template <class M>
concept JointModel = std::derived_from<M, Predictor> && requires(const M& m, const TokenSeq& s) {
  { m.log_marginal(s) } -> std::convertible_to<double>;
};

inline constexpr double kIdentityTolerance = 1e-10;

struct IdentityCheck {
  double log_per_token = 0.0;               // left-to-right singleton chunks
  double log_chain_rule = 0.0;              // log P(z) - log P(z_{M-bar}) from the joint
  std::optional<double> log_arm;            // arm_generate, for contiguous suffix masks
  double rel_error = 0.0;
  bool holds = false;
};

inline double relative_log_error(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(a)); }

/// Per-token left-to-right diffusion p_z against the chain-rule product of the joint.
template <JointModel M>
IdentityCheck check_chain_rule_identity(const M& model, const TokenSeq& z, const MaskPattern& mask,
                                 double tol = kIdentityTolerance) {
  const VocabSpec vocab = model.vocab();
  const RecoveryOrder order = RecoveryOrder::left_to_right(mask);
  IdentityCheck c;
  c.log_per_token = exact_log_pz_fixed_partition(model, z, mask, order, even_split(order, std::max<std::size_t>(
                                                                                               mask.count(), 1)));
  c.log_chain_rule = model.log_marginal(z) - model.log_marginal(mask.apply(z, vocab.mask_id));
  c.rel_error = relative_log_error(c.log_per_token, c.log_chain_rule);

  const auto& idx = mask.masked();
  const bool suffix = !idx.empty() && idx.back() + 1 == z.size() && idx.back() - idx.front() + 1 == idx.size();
  if (suffix) {
    const auto begin = static_cast<std::ptrdiff_t>(idx.front());
    TokenSeq prefix(std::vector<Token>(z.begin(), z.begin() + begin));
    TokenSeq tail(std::vector<Token>(z.begin() + begin, z.end()));
    SamplerConfig sampler;
    Rng rng(0, 0, 0);
    c.log_arm = arm_generate(model, prefix, tail, sampler, rng).log_pz;
    c.rel_error = std::max(c.rel_error, relative_log_error(c.log_per_token, *c.log_arm));
  }
  c.holds = c.rel_error <= tol;
  return c;
}

// ---------------------------------------------------------------------------
// JSON reports
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const Partition& p) { return p.chunks; }

inline nlohmann::json to_json(const AssumptionReport& r, std::size_t max_listed = 64) {
  nlohmann::json v = nlohmann::json::array();
  for (std::size_t i = 0; i < r.violations.size() && i < max_listed; ++i) {
    const auto& x = r.violations[i];
    v.push_back({{"U", indices_of(x.smaller)},
                 {"W", indices_of(x.larger)},
                 {"targets", indices_of(x.targets)},
                 {"log_p_U", x.log_smaller},
                 {"log_p_W", x.log_larger},
                 {"gap", x.gap()}});
  }
  return {{"length", r.length},
          {"triples_checked", r.triples_checked},
          {"violation_count", r.violations.size()},
          {"holds", r.holds()},
          {"violations", v}};
}

inline nlohmann::json to_json(const RefinementCheck& r) {
  return {{"verdict", to_string(r.verdict)},   {"fine", to_json(r.fine)},
          {"coarse", to_json(r.coarse)},       {"log_pz_fine", r.log_fine},
          {"log_pz_coarse", r.log_coarse},     {"reversal", r.reversal},
          {"assumption_failures", r.assumption_failures}};
}

inline nlohmann::json to_json(const ChainReport& r) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : r.steps) steps.push_back(to_json(s));
  return {{"order", r.order.order},       {"log_pz", r.log_pz},
          {"monotone", r.monotone()},     {"assumption_failed", r.assumption_failed()},
          {"steps", steps}};
}

inline nlohmann::json to_json(const IdentityCheck& c) {
  nlohmann::json j = {{"log_pz_per_token", c.log_per_token},
                      {"log_pz_chain_rule", c.log_chain_rule},
                      {"rel_error", c.rel_error},
                      {"holds", c.holds}};
  if (c.log_arm) j["log_pz_arm"] = *c.log_arm;
  return j;
}

}  // namespace memex
