#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "memex/random.hpp"
#include "memex/synth.hpp"
#include "memex/toymodel.hpp"

using namespace memex;

namespace {

// Direct Bayes computation, written independently of PosteriorModel.
std::vector<double> brute_predict(const Corpus& c, double eta, std::size_t k, const std::vector<Token>& observed,
                                  Token mask, Index target) {
  const double hit = 1 - eta + eta / k, miss = eta / k;
  std::vector<double> post;
  double total = 0;
  for (std::size_t j = 0; j < c.size(); ++j) {
    double w = c.weight(j);
    for (std::size_t l = 0; l < observed.size(); ++l)
      if (observed[l] != mask) w *= observed[l] == c.sequences[j][l] ? hit : miss;
    post.push_back(w);
    total += w;
  }
  std::vector<double> d(k, 0.0);
  for (std::size_t v = 0; v < k; ++v)
    for (std::size_t j = 0; j < c.size(); ++j)
      d[v] += post[j] / total * (static_cast<Token>(v) == c.sequences[j][target] ? hit : miss);
  return d;
}

Corpus two_component() {
  Corpus c;
  c.add(TokenSeq{0, 0});
  c.add(TokenSeq{1, 1});
  return c;
}

}  // namespace

TEST(PosteriorModel, HandComputedConditionals) {
  const auto m = fit(two_component(), 0.2, VocabSpec::with_size(2));
  EXPECT_DOUBLE_EQ(m.hit_prob(), 0.9);
  EXPECT_DOUBLE_EQ(m.miss_prob(), 0.1);
  const Token M = m.vocab().mask_id;
  const std::vector<Index> t0{0};
  // Nothing observed: both components equally likely.
  EXPECT_NEAR(m.predict(TokenSeq{M, M}, t0)[0][0], 0.5, 1e-15);
  // z1 = 0 observed: posterior (0.9, 0.1), so P(z0 = 0) = 0.9*0.9 + 0.1*0.1.
  EXPECT_NEAR(m.predict(TokenSeq{M, 0}, t0)[0][0], 0.82, 1e-15);
  EXPECT_NEAR(std::exp(m.log_marginal(TokenSeq{0, 0})), 0.41, 1e-15);
  EXPECT_NEAR(std::exp(m.log_marginal(TokenSeq{M, M})), 1.0, 1e-15);
}

TEST(PosteriorModel, MatchesBruteForceBayes) {
  Rng rng(3, 0, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t k = 2 + rng.below(4), L = 3 + rng.below(5);
    Corpus c;
    for (std::size_t j = 0, n = 1 + rng.below(6); j < n; ++j)
      c.add(synth::random_sequence(rng, L, k), 0.1 + rng.uniform());
    const double eta = 0.01 + 0.9 * rng.uniform();
    const auto m = fit(c, eta, VocabSpec::with_size(k));
    std::vector<Token> obs = synth::random_sequence(rng, L, k).tokens();
    std::vector<Index> targets;
    for (Index l = 0; l < L; ++l)
      if (rng.uniform() < 0.5) {
        obs[l] = m.vocab().mask_id;
        targets.push_back(l);
      }
    if (targets.empty()) continue;
    const auto got = m.predict(TokenSeq(obs), targets);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const auto want = brute_predict(c, eta, k, obs, m.vocab().mask_id, targets[i]);
      double s = 0;
      for (std::size_t v = 0; v < k; ++v) {
        EXPECT_NEAR(got[i][v], want[v], 1e-12);
        s += got[i][v];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(PosteriorModel, ChainRuleOfMarginals) {
  // P(z_a, z_b) = P(z_a) * P(z_b | z_a) with both sides from different code paths.
  Rng rng(4, 0, 0);
  Corpus c;
  for (int j = 0; j < 5; ++j) c.add(synth::random_sequence(rng, 4, 3), 1.0 + j);
  const auto m = fit(c, 0.3, VocabSpec::with_size(3));
  const Token M = m.vocab().mask_id;
  const TokenSeq z{2, 0, 1, 1};
  const double joint = m.log_marginal(TokenSeq{2, 0, M, M});
  const double first = m.log_marginal(TokenSeq{2, M, M, M});
  const Index t1 = 1;
  const double cond = std::log(m.predict(TokenSeq{2, M, M, M}, std::span<const Index>(&t1, 1))[0][0]);
  EXPECT_NEAR(joint, first + cond, 1e-12);
}

TEST(PosteriorModel, RejectsBadTargetsAndLengths) {
  const auto m = fit(two_component(), 0.2, VocabSpec::with_size(2));
  const std::vector<Index> t{1};
  EXPECT_THROW(m.predict(TokenSeq{2, 0}, t), Error);       // target not masked
  EXPECT_THROW(m.predict(TokenSeq{2, 2, 2}, t), Error);    // wrong length
  EXPECT_THROW(fit(two_component(), 0.0, VocabSpec::with_size(2)), Error);
  EXPECT_THROW(fit(two_component(), 1.0, VocabSpec::with_size(2)), Error);
  Corpus ragged = two_component();
  ragged.add(TokenSeq{1, 1, 1});
  EXPECT_THROW(fit(ragged, 0.1, VocabSpec::with_size(2)), Error);
}

TEST(PosteriorModel, MergesDuplicatesAndHashesDeterministically) {
  Corpus c = two_component();
  c.add(TokenSeq{0, 0}, 2.0);
  const auto m = fit(c, 0.2, VocabSpec::with_size(2));
  EXPECT_EQ(m.components(), 2u);
  EXPECT_DOUBLE_EQ(m.component_weight(0), 3.0);
  const auto again = fit(c, 0.2, VocabSpec::with_size(2));
  EXPECT_EQ(m.content_hash(), again.content_hash());
  EXPECT_NE(m.content_hash(), fit(c, 0.3, VocabSpec::with_size(2)).content_hash());
  const auto loaded = model_from_json(m.to_json());
  EXPECT_EQ(loaded.content_hash(), m.content_hash());
  auto tampered = m.to_json();
  tampered["eta"] = 0.25;
  EXPECT_THROW(model_from_json(tampered), Error);
}

TEST(PosteriorModel, NllBoundIsPositiveAndSeeded) {
  const auto m = fit(two_component(), 0.2, VocabSpec::with_size(2));
  const auto a = m.nll_bound(TokenSeq{0, 0}, 2000, 7);
  const auto b = m.nll_bound(TokenSeq{0, 0}, 2000, 7);
  EXPECT_EQ(a.value, b.value);
  // The bound dominates the exact NLL -log 0.41 up to Monte Carlo error.
  EXPECT_GT(a.value + 4 * a.stderr_, -std::log(0.41));
}

TEST(Corpus, ReadWriteRoundTrip) {
  std::istringstream in("# header comment\n0 1 2\n\n2 1 0 # weight=2.5\n");
  const auto c = read_corpus(in);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.sequences[1], (TokenSeq{2, 1, 0}));
  EXPECT_DOUBLE_EQ(c.weight(1), 2.5);
  EXPECT_EQ(c.inferred_vocab_size(), 3u);
  std::ostringstream out;
  write_corpus(out, c);
  EXPECT_EQ(out.str(), "0 1 2\n2 1 0 # weight=2.5\n");
  std::istringstream bad("0 x 2\n");
  EXPECT_THROW(read_corpus(bad), Error);
  std::istringstream neg("0 -1 2\n");
  EXPECT_THROW(read_corpus(neg), Error);
}
