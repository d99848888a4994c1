#pragma once

// Seeded generators for the bundled desk-scale corpora and test instances.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "memex/core.hpp"
#include "memex/numeric.hpp"
#include "memex/oracle.hpp"
#include "memex/pii.hpp"
#include "memex/random.hpp"
#include "memex/toymodel.hpp"

namespace memex::synth {

inline TokenSeq random_sequence(Rng& rng, std::size_t length, std::size_t k) {
  std::vector<Token> out(length);
  for (auto& t : out) t = static_cast<Token>(rng.below(k));
  return TokenSeq(std::move(out));
}

/// A token different from `t`, uniform over the other K - 1 values.
inline Token other_token(Rng& rng, Token t, std::size_t k) {
  auto v = static_cast<Token>(rng.below(k - 1));
  return v >= t ? v + 1 : v;
}

/// Copy of `base` with the given positions changed to other tokens.
inline TokenSeq perturb(Rng& rng, const TokenSeq& base, std::span<const Index> positions, std::size_t k) {
  std::vector<Token> out = base.tokens();
  for (Index i : positions) out[i] = other_token(rng, out[i], k);
  return TokenSeq(std::move(out));
}

inline std::vector<Index> random_subset(Rng& rng, std::size_t length, std::size_t count) {
  std::vector<Index> all(length);
  for (Index i = 0; i < length; ++i) all[i] = i;
  auto s = sample_without_replacement(rng, std::move(all), count);
  std::sort(s.begin(), s.end());
  return s;
}

/// Base sequence followed by `variants` near-duplicates, each differing from it at `diff` random positions.
inline Corpus near_duplicate_family(Rng& rng, const TokenSeq& base, std::size_t variants, std::size_t diff,
                                    std::size_t k, double base_weight = 1.0, double variant_weight = 1.0) {
  Corpus c;
  c.add(base, base_weight);
  for (std::size_t v = 0; v < variants; ++v)
    c.add(perturb(rng, base, random_subset(rng, base.size(), diff), k), variant_weight);
  return c;
}

inline void append(Corpus& into, const Corpus& from) {
  for (std::size_t i = 0; i < from.size(); ++i) into.add(from.sequences[i], from.weight(i));
}

/// Families of near-duplicates with varied sizes, edit distances and weights, so that
/// per-example recovery probabilities span several decades.
inline Corpus graded_memorization_corpus(Rng& rng, std::size_t families, std::size_t length, std::size_t k) {
  Corpus c;
  for (std::size_t f = 0; f < families; ++f) {
    const TokenSeq base = random_sequence(rng, length, k);
    const std::size_t variants = rng.below(25);
    const std::size_t diff = 1 + rng.below(std::max<std::size_t>(1, std::min<std::size_t>(5, length / 3)));
    const double w = std::exp(4.0 * (rng.uniform() - 0.5));
    append(c, near_duplicate_family(rng, base, variants, diff, k, w, w * (0.1 + rng.uniform())));
  }
  return c;
}

/// First-order Markov chain with a random sparse-ish transition matrix (each row a Dirichlet-like draw).
struct MarkovChain {
  std::size_t k = 0;
  std::vector<std::vector<double>> rows;

  static MarkovChain random(Rng& rng, std::size_t k, double sharpness) {
    MarkovChain m;
    m.k = k;
    for (std::size_t a = 0; a < k; ++a) {
      std::vector<double> row(k);
      double total = 0.0;
      for (auto& x : row) {
        x = std::pow(rng.uniform(), sharpness);
        total += x;
      }
      for (auto& x : row) x /= total;
      m.rows.push_back(std::move(row));
    }
    return m;
  }

  TokenSeq sample(Rng& rng, std::size_t length) const {
    std::vector<Token> out(length);
    out[0] = static_cast<Token>(rng.below(k));
    for (std::size_t i = 1; i < length; ++i)
      out[i] = static_cast<Token>(sample_categorical(rng, rows[static_cast<std::size_t>(out[i - 1])]));
    return TokenSeq(std::move(out));
  }
};

/// Instance whose generated Hamming distances spread approximately normally: z plus rivals that agree
/// with z outside `mask` and differ inside it at counts following normal quantiles.
inline Corpus hamming_spread_corpus(Rng& rng, const TokenSeq& z, const MaskPattern& mask, std::size_t rivals,
                                    double mean_diff, double sd_diff, std::size_t k) {
  Corpus c;
  c.add(z);
  const auto& m = mask.masked();
  for (std::size_t r = 0; r < rivals; ++r) {
    // Inverse normal CDF by bisection on the erf-based CDF.
    const double q = (static_cast<double>(r) + 0.5) / static_cast<double>(rivals);
    double lo = -10, hi = 10;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (normal_cdf(mid) < q ? lo : hi) = mid;
    }
    const double d = std::round(mean_diff + sd_diff * 0.5 * (lo + hi));
    const auto count = static_cast<std::size_t>(std::clamp(d, 0.0, static_cast<double>(m.size())));
    auto pick = sample_without_replacement(rng, std::vector<Index>(m.begin(), m.end()), count);
    c.add(perturb(rng, z, pick, k));
  }
  return c;
}

/// Two components: z and a rival that agrees outside `mask` and differs at every masked position.
/// Left-to-right decoding then yields either (nearly) all tokens right or all wrong.
inline Corpus all_or_nothing_corpus(Rng& rng, const TokenSeq& z, const MaskPattern& mask, std::size_t k) {
  Corpus c;
  c.add(z);
  c.add(perturb(rng, z, mask.masked(), k));
  return c;
}

/// Z = [x, y'] against corpus {[x, y], [x', y']}: observing the second token pulls the posterior
/// toward the component that is wrong at the first.
inline Corpus assumption_violating_corpus() {
  Corpus c;
  c.add(TokenSeq{0, 0, 0, 0});
  c.add(TokenSeq{1, 1, 0, 0});
  return c;
}

inline TokenSeq assumption_violating_target() { return TokenSeq{0, 1, 0, 0}; }

/// Random small instance: 1-3 components over K tokens, target = a component or a perturbation of one.
struct SmallInstance {
  Corpus corpus;
  double eta = 0.1;
  std::size_t k = 2;
  TokenSeq z;
  MaskPattern mask;
};

inline SmallInstance random_small_instance(Rng& rng, std::size_t max_length = 7, std::size_t max_masked = 5) {
  SmallInstance inst;
  const std::size_t length = 3 + rng.below(max_length - 2);
  inst.k = 2 + rng.below(3);
  inst.eta = 0.02 + 0.4 * rng.uniform();
  const std::size_t comps = 1 + rng.below(3);
  for (std::size_t j = 0; j < comps; ++j)
    inst.corpus.add(random_sequence(rng, length, inst.k), 0.5 + rng.uniform());
  inst.z = inst.corpus.sequences[rng.below(comps)];
  if (rng.uniform() < 0.3) inst.z = perturb(rng, inst.z, random_subset(rng, length, 1), inst.k);
  const std::size_t m = 1 + rng.below(std::min(length, max_masked));
  inst.mask = MaskPattern(length, random_subset(rng, length, m));
  return inst;
}

inline PosteriorModel fit_instance(const SmallInstance& inst) {
  return fit(inst.corpus, inst.eta, VocabSpec::with_size(inst.k));
}

/// Searches random two-sequence corpora (L = 4, K = 3) for a target with an Assumption violation.
inline SmallInstance find_assumption_violation(Rng& rng, std::size_t attempts = 10000) {
  for (std::size_t a = 0; a < attempts; ++a) {
    SmallInstance inst;
    inst.k = 3;
    inst.eta = 0.05 + 0.3 * rng.uniform();
    inst.corpus.add(random_sequence(rng, 4, 3));
    inst.corpus.add(random_sequence(rng, 4, 3));
    inst.z = random_sequence(rng, 4, 3);
    inst.mask = MaskPattern(4, {0, 1, 2, 3});
    if (inst.corpus.sequences[0] == inst.corpus.sequences[1]) continue;
    const auto model = fit_instance(inst);
    if (!check_assumption1(model, inst.z).holds()) return inst;
  }
  fail(ErrorCode::unreachable, "no violating instance found");
}

// ---------------------------------------------------------------------------
// PII documents
// ---------------------------------------------------------------------------

inline std::string random_word(Rng& rng, std::size_t min_len, std::size_t max_len) {
  static const char* letters = "abcdefghijklmnopqrstuvwxyz";
  const std::size_t n = min_len + rng.below(max_len - min_len + 1);
  std::string w;
  for (std::size_t i = 0; i < n; ++i) w += letters[rng.below(26)];
  return w;
}

inline std::string random_email(Rng& rng) {
  static const char* tlds[] = {"com", "org", "net", "edu", "info"};
  return random_word(rng, 3, 8) + "." + random_word(rng, 3, 8) + "@" + random_word(rng, 4, 8) + "." +
         tlds[rng.below(5)];
}

inline std::string random_phone(Rng& rng) {
  static const char seps[] = {'-', '.', '-'};
  const char s = seps[rng.below(3)];
  std::string d;
  for (int i = 0; i < 10; ++i) d += static_cast<char>('0' + rng.below(10));
  return d.substr(0, 3) + s + d.substr(3, 3) + s + d.substr(6);
}

/// Filler prose: lowercase words with no PII.
inline std::string filler(Rng& rng, std::size_t min_chars) {
  std::string out;
  while (out.size() < min_chars) {
    if (!out.empty()) out += ' ';
    out += random_word(rng, 2, 9);
  }
  return out;
}

struct PlantedPii {
  std::string doc_id;
  PiiCategory category;
  std::string value;
  bool expect_record;  // true iff the occurrence should survive the prefix and extra-email rules
};

struct PiiCorpus {
  std::vector<Document> docs;
  std::vector<PlantedPii> planted;
};

/// Documents with one planted PII occurrence each, in four kinds: valid email, valid phone,
/// email with too little preceding context, and email preceded by a second email inside its prefix.
inline PiiCorpus pii_corpus(Rng& rng, std::size_t per_kind) {
  PiiCorpus c;
  std::size_t id = 0;
  auto next_id = [&] {
    std::string s = std::to_string(id++);
    return "doc" + std::string(6 - std::min<std::size_t>(6, s.size()), '0') + s;
  };
  for (std::size_t i = 0; i < per_kind; ++i) {
    {
      const auto e = random_email(rng);
      auto d = Document{next_id(), filler(rng, 120 + rng.below(200)) + " " + e + " " + filler(rng, 20)};
      c.planted.push_back({d.id, PiiCategory::email, e, true});
      c.docs.push_back(std::move(d));
    }
    {
      const auto p = random_phone(rng);
      auto d = Document{next_id(), filler(rng, 120 + rng.below(200)) + " call " + p + " " + filler(rng, 20)};
      c.planted.push_back({d.id, PiiCategory::phone, p, true});
      c.docs.push_back(std::move(d));
    }
    {
      const auto e = random_email(rng);
      auto d = Document{next_id(), filler(rng, 10 + rng.below(60)) + " " + e + " " + filler(rng, 40)};
      c.planted.push_back({d.id, PiiCategory::email, e, d.text.find(e) >= kPrefixTokens});
      c.docs.push_back(std::move(d));
    }
    {
      const auto first = random_email(rng);
      const auto e = random_email(rng);
      auto d = Document{next_id(), filler(rng, 150) + " " + first + " " + filler(rng, 20 + rng.below(40)) + " " + e +
                                       " " + filler(rng, 20)};
      c.planted.push_back({d.id, PiiCategory::email, first, true});
      c.planted.push_back({d.id, PiiCategory::email, e, false});
      c.docs.push_back(std::move(d));
    }
  }
  return c;
}

}  // namespace memex::synth
