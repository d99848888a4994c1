#pragma once

// Forward masking, reverse (diffusion) generation and left-to-right (ARM)
// generation, each recording a full trajectory.

#include <algorithm>
#include <cmath>
#include <iterator>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "memex/core.hpp"
#include "memex/numeric.hpp"
#include "memex/predictor.hpp"
#include "memex/random.hpp"
#include "memex/samplers.hpp"

namespace memex {

/// Keeps each token with probability 1 - t, otherwise replaces it with the sentinel.
inline TokenSeq forward_mask(const TokenSeq& z0, double t, Token mask_id, Rng& rng) {
  require(t >= 0.0 && t <= 1.0, ErrorCode::invalid_argument, "forward_mask needs t in [0,1]");
  std::vector<Token> out(z0.begin(), z0.end());
  if (t == 0.0) return TokenSeq(std::move(out));
  for (Token& tok : out)
    if (t == 1.0 || rng.uniform() < t) tok = mask_id;
  return TokenSeq(std::move(out));
}

struct Conditional {
  Index position;
  double probability;  // Pr(token rule emits z_pi | ground-truth context z_{U_{k-1}})
};

/// One reverse-sampling run.
///
/// `chunks` and `conditionals` follow the ground-truth-context process: each
/// chunk is conditioned on the true tokens of U_{k-1}. While every committed
/// token is correct this coincides with the generation itself. After a wrong
/// commit the generation continues from its own tokens (`generated`,
/// `log_path`), and the next queries are re-issued with the true tokens
/// substituted. `path_chunks` is set only when the two processes chose
/// different positions (greedy selection after a wrong commit).
struct TrajectoryRecord {
  MaskPattern mask;
  Partition chunks;
  std::vector<std::size_t> step_sizes;  // |Delta_k| for every grid step, zeros kept
  std::vector<Conditional> conditionals;
  double log_pz = 0.0;
  double log_path = 0.0;
  TokenSeq generated;
  bool exact_match = false;
  std::size_t hamming = 0;
  bool truth_tracked = true;
  std::optional<Partition> path_chunks;

  double pz() const { return std::exp(log_pz); }

  /// U_k: observed indices after k realized chunks (U_0 is the complement of M).
  std::vector<Index> observed_set(std::size_t k) const {
    std::vector<bool> known(mask.length(), true);
    for (Index i : mask.masked()) known[i] = false;
    for (std::size_t c = 0; c < k && c < chunks.size(); ++c)
      for (Index i : chunks.chunks[c]) known[i] = true;
    std::vector<Index> out;
    for (Index i = 0; i < known.size(); ++i)
      if (known[i]) out.push_back(i);
    return out;
  }

  bool complete() const {
    if (!truth_tracked) return false;
    return conditionals.size() == mask.count() && chunks.sorted_indices() == mask.masked();
  }
};

struct GenerateOptions {
  StepRule step_rule = StepRule::literal_floor;
  /// Track the ground-truth-context conditionals; off for pure hit-rate runs.
  bool track_truth = true;
};

namespace detail {

struct Branch {
  std::vector<Token> seq;
  std::vector<Index> remaining;  // sorted

  void commit(const std::vector<Index>& chosen) {
    std::vector<Index> rest;
    rest.reserve(remaining.size() - chosen.size());
    std::set_difference(remaining.begin(), remaining.end(), chosen.begin(), chosen.end(), std::back_inserter(rest));
    remaining.swap(rest);
  }
};

inline std::vector<double> confidences_of(const std::vector<Distribution>& dists) {
  std::vector<double> out(dists.size());
  for (std::size_t i = 0; i < dists.size(); ++i) out[i] = confidence(dists[i]);
  return out;
}

inline const Distribution& dist_at(const std::vector<Index>& positions, const std::vector<Distribution>& dists,
                                   Index pos) {
  auto it = std::lower_bound(positions.begin(), positions.end(), pos);
  return dists[static_cast<std::size_t>(it - positions.begin())];
}

inline void finish(TrajectoryRecord& rec, const TokenSeq& z) {
  rec.hamming = hamming(rec.generated, z, rec.mask);
  rec.exact_match = rec.hamming == 0;
}

}  // namespace detail

/// Iterates the linear grid from t = 1 to t = 0, recovering tokens_to_recover positions per step.
/// Observed positions of z are never changed.
inline TrajectoryRecord reverse_generate(const Predictor& model, const TokenSeq& z, const MaskPattern& mask,
                                         const TimeGrid& grid, const SamplerConfig& sampler, Rng& rng,
                                         const GenerateOptions& opts = {}) {
  const VocabSpec vocab = model.vocab();
  require(z.size() == mask.length(), ErrorCode::length_mismatch, "mask length differs from sequence length");
  require(z.mask_free(vocab), ErrorCode::invalid_argument, "ground-truth sequence must be mask-free");
  sampler.validate(vocab.size);
  const TokenRule& rule = sampler.token_rule;
  const PositionRule pos_rule = sampler.position_rule;

  TrajectoryRecord rec;
  rec.mask = mask;
  rec.truth_tracked = opts.track_truth;

  const TokenSeq start = mask.apply(z, vocab.mask_id);
  detail::Branch gen{start.tokens(), mask.masked()};
  detail::Branch truth = gen;
  bool diverged = false;
  Partition path;

  for (std::size_t step = 0; step < grid.resolution(); ++step) {
    const std::size_t k = tokens_to_recover(grid, step, gen.remaining.size(), opts.step_rule);
    rec.step_sizes.push_back(k);
    if (k == 0) continue;

    const auto gen_dists = model.predict(TokenSeq(gen.seq), gen.remaining);
    const auto gen_conf =
        pos_rule == PositionRule::greedy_confidence ? detail::confidences_of(gen_dists) : std::vector<double>{};
    const auto chosen = select_positions(gen.remaining, gen_conf, k, pos_rule, rng);

    std::vector<Index> truth_chosen;
    std::vector<Distribution> truth_dists;
    const std::vector<Index>* truth_positions = &gen.remaining;
    const std::vector<Distribution>* truth_source = &gen_dists;
    if (opts.track_truth) {
      if (!diverged) {
        truth_chosen = chosen;
      } else if (pos_rule != PositionRule::greedy_confidence) {
        // Position choice does not look at token values, so both processes share it.
        truth_chosen = chosen;
        truth_dists = model.predict(TokenSeq(truth.seq), truth_chosen);
        truth_positions = &truth_chosen;
        truth_source = &truth_dists;
      } else {
        truth_dists = model.predict(TokenSeq(truth.seq), truth.remaining);
        Rng unused(0, 0, 0);
        truth_chosen = select_positions(truth.remaining, detail::confidences_of(truth_dists), k, pos_rule, unused);
        truth_positions = &truth.remaining;
        truth_source = &truth_dists;
      }
    }

    for (Index pos : chosen) {
      const Distribution& d = detail::dist_at(gen.remaining, gen_dists, pos);
      const Token tok = sample_token(d, rule, rng);
      rec.log_path += std::log(effective_probability(d, rule, tok));
      gen.seq[static_cast<std::size_t>(pos)] = tok;
      if (tok != z[pos]) diverged = true;
    }
    if (opts.track_truth) {
      for (Index pos : truth_chosen) {
        const Distribution& d = detail::dist_at(*truth_positions, *truth_source, pos);
        const double q = effective_probability(d, rule, z[pos]);
        rec.conditionals.push_back({pos, q});
        rec.log_pz += std::log(q);
        truth.seq[static_cast<std::size_t>(pos)] = z[pos];
      }
      rec.chunks.chunks.push_back(truth_chosen);
      truth.commit(truth_chosen);
    }
    path.chunks.push_back(chosen);
    gen.commit(chosen);
  }
  require(gen.remaining.empty(), ErrorCode::invalid_resolution, "grid finished with masked tokens left");

  if (opts.track_truth && path != rec.chunks) rec.path_chunks = std::move(path);
  rec.generated = TokenSeq(std::move(gen.seq));
  detail::finish(rec, z);
  return rec;
}

/// Left-to-right decoding of `suffix` after `prefix`, one token per step, conditioning on the left context only.
inline TrajectoryRecord arm_generate(const Predictor& model, const TokenSeq& prefix, const TokenSeq& suffix,
                                     const SamplerConfig& sampler, Rng& rng, const GenerateOptions& opts = {}) {
  const VocabSpec vocab = model.vocab();
  const std::size_t used = prefix.size() + suffix.size();
  const std::size_t length = model.fixed_length().value_or(used);
  require(used <= length, ErrorCode::length_mismatch, "prefix + suffix exceed the model length");
  if (auto cap = model.max_length()) require(length <= *cap, ErrorCode::length_mismatch, "sequence exceeds max_length");
  require(prefix.mask_free(vocab) && suffix.mask_free(vocab), ErrorCode::invalid_argument,
          "prefix and suffix must be mask-free");
  sampler.validate(vocab.size);
  const TokenRule& rule = sampler.token_rule;

  std::vector<Token> truth_full(length, vocab.mask_id);
  std::copy(prefix.begin(), prefix.end(), truth_full.begin());
  std::copy(suffix.begin(), suffix.end(), truth_full.begin() + static_cast<std::ptrdiff_t>(prefix.size()));

  TrajectoryRecord rec;
  rec.mask = MaskPattern::range(length, prefix.size(), used);
  rec.truth_tracked = opts.track_truth;
  std::vector<Token> gen(length, vocab.mask_id);
  std::copy(prefix.begin(), prefix.end(), gen.begin());
  std::vector<Token> truth = gen;
  bool diverged = false;

  for (Index pos = prefix.size(); pos < used; ++pos) {
    const Index target = pos;
    const auto d = model.predict(TokenSeq(gen), std::span<const Index>(&target, 1)).front();
    const Token tok = sample_token(d, rule, rng);
    rec.log_path += std::log(effective_probability(d, rule, tok));
    rec.step_sizes.push_back(1);
    if (opts.track_truth) {
      const Token want = truth_full[pos];
      const double q = diverged
                           ? effective_probability(
                                 model.predict(TokenSeq(truth), std::span<const Index>(&target, 1)).front(), rule, want)
                           : effective_probability(d, rule, want);
      rec.conditionals.push_back({pos, q});
      rec.log_pz += std::log(q);
      rec.chunks.chunks.push_back({pos});
      truth[pos] = want;
    }
    gen[pos] = tok;
    if (tok != truth_full[pos]) diverged = true;
  }
  rec.generated = TokenSeq(std::move(gen));
  // Positions past the suffix stay masked in both; compare against the truth with the same layout.
  std::vector<Token> expected(rec.generated.begin(), rec.generated.end());
  for (Index pos = prefix.size(); pos < used; ++pos) expected[pos] = truth_full[pos];
  detail::finish(rec, TokenSeq(std::move(expected)));
  return rec;
}

// ---------------------------------------------------------------------------
// Trace format: JSON lines, first line is the versioned header.
// ---------------------------------------------------------------------------

inline constexpr const char* kTraceSchema = "memex.trace/1";

inline void write_trace_header(std::ostream& out) {
  out << nlohmann::json{{"schema", kTraceSchema}, {"index_base", 0}}.dump() << '\n';
}

inline nlohmann::json trace_json(const TrajectoryRecord& rec, const std::string& id = {}) {
  nlohmann::json conds = nlohmann::json::array();
  for (const auto& c : rec.conditionals) conds.push_back({c.position, c.probability});
  nlohmann::json j = {
      {"id", id},
      {"length", rec.mask.length()},
      {"mask", rec.mask.masked()},
      {"chunks", rec.chunks.chunks},
      {"step_sizes", rec.step_sizes},
      {"conditionals", conds},
      {"log_pz", rec.truth_tracked ? nlohmann::json(rec.log_pz) : nlohmann::json(nullptr)},
      {"log_path", rec.log_path},
      {"generated", rec.generated.tokens()},
      {"exact_match", rec.exact_match},
      {"hamming", rec.hamming},
  };
  if (rec.path_chunks) j["path_chunks"] = rec.path_chunks->chunks;
  return j;
}

inline void write_trace(std::ostream& out, const TrajectoryRecord& rec, const std::string& id = {}) {
  out << trace_json(rec, id).dump() << '\n';
}

}  // namespace memex
