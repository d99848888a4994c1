#include <gtest/gtest.h>

#include <cmath>

#include "memex/extraction.hpp"
#include "memex/oracle.hpp"
#include "memex/synth.hpp"
#include "memex/toymodel.hpp"

using namespace memex;

namespace {

PosteriorModel small_model(std::uint64_t seed, std::size_t length, std::size_t k, std::size_t comps, double eta) {
  Rng rng(seed, 0, 0);
  Corpus c;
  for (std::size_t j = 0; j < comps; ++j) c.add(synth::random_sequence(rng, length, k), 0.5 + rng.uniform());
  return fit(c, eta, VocabSpec::with_size(k));
}

}  // namespace

TEST(RequiredQueries, FrozenValues) {
  EXPECT_EQ(*required_queries(0.5, 0.99).n, 7u);
  EXPECT_EQ(*required_queries(0.001, 0.5).n, 693u);
  EXPECT_EQ(*required_queries(0.9, 0.5).n, 1u);
  EXPECT_EQ(*required_queries(1.0, 0.999).n, 1u);
  EXPECT_TRUE(required_queries(0.0, 0.5).unbounded());
  EXPECT_THROW(required_queries(0.5, 1.0), Error);
  EXPECT_THROW(required_queries(-0.1, 0.5), Error);
}

TEST(RequiredQueries, MinimalOnGrid) {
  for (double pz : {1e-6, 1e-4, 0.003, 0.05, 0.2, 0.5, 0.77, 0.999})
    for (double p : {0.01, 0.1, 0.5, 0.9, 0.99, 0.999}) {
      const auto r = required_queries(pz, p);
      ASSERT_TRUE(r.n);
      const double n = static_cast<double>(*r.n);
      EXPECT_GE(1 - std::pow(1 - pz, n), p - 1e-12) << pz << " " << p;
      if (*r.n > 1) {
        EXPECT_LT(1 - std::pow(1 - pz, n - 1), p + 1e-12) << pz << " " << p;
      }
    }
}

TEST(Discoverable, CountsAgainstBudget) {
  const std::vector<double> pz{0.5, 0.01, 1e-5, 0.0};
  EXPECT_EQ(discoverable_count(std::span<const double>(pz), 7, 0.99), 1u);
  EXPECT_EQ(discoverable_count(std::span<const double>(pz), 500, 0.99), 2u);
  EXPECT_EQ(discoverable_count(std::span<const double>(pz), 1000000, 0.99), 3u);
}

TEST(HammingStats, MomentsAndCdf) {
  const std::vector<std::size_t> d{0, 2, 4};
  const auto s = hamming_stats(d);
  EXPECT_DOUBLE_EQ(s.mu, 2.0);
  EXPECT_NEAR(s.sigma, std::sqrt(8.0 / 3.0), 1e-15);
  EXPECT_DOUBLE_EQ(s.cdf(1.0), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.cdf(4.0), 1.0);
  EXPECT_DOUBLE_EQ(s.cdf(-1.0), 0.0);
  EXPECT_EQ(central_regime(s), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_NEAR(gaussian_eps_approx(2.0, 1.0, 3.0), 0.8413447460685429, 1e-15);
  EXPECT_EQ(gaussian_eps_approx(2.0, 0.0, 2.0), 1.0);
  EXPECT_EQ(gaussian_eps_approx(2.0, 0.0, 1.0), 0.0);
}

TEST(EstimatePz, MatchesExactEnumeration) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto m = small_model(seed, 6, 3, 3, 0.3);
    const TokenSeq z = m.component(0);
    const MaskPattern mask(6, {0, 2, 3, 5});
    SamplerConfig s;
    s.seed = seed;
    for (std::size_t n : {1, 2, 4}) {
      const double exact = enumerate_orders_pz(m, z, mask, make_linear_grid(n), s.position_rule);
      const auto est = estimate_pz(m, z, mask, Resolution::steps(n), s, 20000);
      EXPECT_NEAR(est.mean, exact, 5 * est.std_error + 1e-12) << "seed " << seed << " N " << n;
    }
  }
}

TEST(EstimatePz, EmpiricalExactMatchAgreesWithTheory) {
  Corpus c;
  c.add(TokenSeq{0, 0});
  c.add(TokenSeq{1, 1});
  const auto m = fit(c, 0.2, VocabSpec::with_size(2));
  SamplerConfig s;
  s.seed = 3;
  const auto hit = empirical_hit_rate(m, TokenSeq{0, 0}, MaskPattern(2, {0, 1}), Resolution::steps(2), s, 20000);
  EXPECT_NEAR(hit.rate(), 0.41, 5 * std::sqrt(0.41 * 0.59 / 20000));
  const auto est = estimate_pz(m, TokenSeq{0, 0}, MaskPattern(2, {0, 1}), Resolution::steps(2), s, 100);
  EXPECT_NEAR(est.mean, 0.41, 1e-15);
  EXPECT_EQ(est.std_error, 0.0);
}

TEST(EstimatePz, IdenticalAcrossThreadCounts) {
  const auto m = small_model(7, 10, 4, 5, 0.2);
  const TokenSeq z = m.component(1);
  SamplerConfig s;
  s.seed = 99;
  RunOptions o1, o4;
  o1.keep_trials = o4.keep_trials = true;
  o1.threads = 1;
  o4.threads = 4;
  const auto a = estimate_pz(m, z, RandomMask{0.4}, Resolution::steps(2), s, 300, o1);
  const auto b = estimate_pz(m, z, RandomMask{0.4}, Resolution::steps(2), s, 300, o4);
  EXPECT_EQ(a.per_trial, b.per_trial);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.ci_low, b.ci_low);
  const auto d1 = generation_distances(m, z, RandomMask{0.4}, Resolution::max(), s, 200, o1);
  const auto d4 = generation_distances(m, z, RandomMask{0.4}, Resolution::max(), s, 200, o4);
  EXPECT_EQ(d1, d4);
}

TEST(EstimatePz, StreamsSeparateExamples) {
  const auto m = small_model(8, 10, 4, 5, 0.2);
  SamplerConfig s;
  RunOptions a, b;
  a.keep_trials = b.keep_trials = true;
  b.stream = 1;
  const auto x = estimate_pz(m, m.component(0), RandomMask{0.5}, Resolution::steps(1), s, 50, a);
  const auto y = estimate_pz(m, m.component(0), RandomMask{0.5}, Resolution::steps(1), s, 50, b);
  EXPECT_NE(x.per_trial, y.per_trial);
}

TEST(RandomMask, CountRounding) {
  EXPECT_EQ(RandomMask{0.25}.count(10), 3u);
  EXPECT_EQ(RandomMask{0.01}.count(10), 1u);
  EXPECT_EQ(RandomMask{1.0}.count(10), 10u);
  EXPECT_THROW(RandomMask{0.0}.count(10), Error);
}

TEST(Normality, ControlsSeparate) {
  // Binomial(40, 0.5) distances are close to Gaussian; a two-point mass is not.
  Rng rng(5, 0, 0);
  std::vector<std::size_t> binom(20000), twopoint(20000);
  for (auto& d : binom)
    for (int i = 0; i < 40; ++i) d += rng.uniform() < 0.5;
  for (auto& d : twopoint) d = rng.uniform() < 0.5 ? 0 : 20;
  EXPECT_TRUE(normality_check(hamming_stats(binom)).passes);
  EXPECT_FALSE(normality_check(hamming_stats(twopoint)).passes);
}
