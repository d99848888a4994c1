#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "memex/numeric.hpp"
#include "memex/random.hpp"

using namespace memex;

TEST(Philox, KnownAnswerVectors) {
  // Random123 kat_vectors for philox4x32_10.
  EXPECT_EQ(Philox::block({0, 0}, {0, 0, 0, 0}),
            (std::array<std::uint32_t, 4>{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
  EXPECT_EQ(Philox::block({0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}),
            (std::array<std::uint32_t, 4>{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
  EXPECT_EQ(Philox::block({0xa4093822u, 0x299f31d0u}, {0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}),
            (std::array<std::uint32_t, 4>{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Philox, StreamsAreReproducibleAndDistinct) {
  Rng a(7, 3, 11), b(7, 3, 11), c(7, 3, 12), d(7, 4, 11);
  std::vector<std::uint32_t> xa, xb, xc, xd;
  for (int i = 0; i < 16; ++i) {
    xa.push_back(a());
    xb.push_back(b());
    xc.push_back(c());
    xd.push_back(d());
  }
  EXPECT_EQ(xa, xb);
  EXPECT_NE(xa, xc);
  EXPECT_NE(xa, xd);
}

TEST(Philox, UniformAndBelowStayInRange) {
  Rng r(1, 0, 0);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) {
    const double u = r.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    ++counts[r.below(5)];
  }
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);  // > 5 sigma
  EXPECT_THROW(r.below(0), Error);
}

TEST(Sampling, WithoutReplacementIsDistinct) {
  Rng r(2, 0, 0);
  std::vector<int> items{0, 1, 2, 3, 4, 5, 6, 7};
  auto s = sample_without_replacement(r, items, 5);
  EXPECT_EQ(std::set<int>(s.begin(), s.end()).size(), 5u);
  EXPECT_THROW(sample_without_replacement(r, items, 9), Error);
}

TEST(Sampling, CategoricalFrequencies) {
  Rng r(3, 0, 0);
  const std::vector<double> p{0.2, 0.0, 0.5, 0.3};
  std::vector<int> c(4, 0);
  const int n = 40000;
  for (int i = 0; i < n; ++i) ++c[sample_categorical(r, p)];
  EXPECT_EQ(c[1], 0);
  for (int k : {0, 2, 3}) EXPECT_NEAR(c[k] / double(n), p[k], 5 * std::sqrt(p[k] * (1 - p[k]) / n));
  EXPECT_THROW(sample_categorical(r, std::vector<double>{0.0, 0.0}), Error);
}

TEST(Numeric, LogSumExpIsStable) {
  const std::vector<double> xs{1000.0, 1000.0, 999.0};
  EXPECT_NEAR(log_sum_exp(xs), 1000.8619948040582, 1e-12);
  EXPECT_EQ(log_sum_exp(std::vector<double>{kNegInf, kNegInf}), kNegInf);
  EXPECT_NEAR(log_sum_exp(std::vector<double>{std::log(0.25), std::log(0.75)}), 0.0, 1e-15);
}

TEST(Numeric, CompensatedSumRecoversSmallTerms) {
  std::vector<double> xs{1e16, 1.0, -1e16};
  EXPECT_EQ(sum(xs), 1.0);
  std::vector<double> many(1000000, 0.1);
  EXPECT_NEAR(sum(many), 100000.0, 1e-9);
}

TEST(Numeric, MomentsAndQuantiles) {
  const std::vector<double> xs{0.0, 2.0, 4.0};
  EXPECT_DOUBLE_EQ(mean(xs), 2.0);
  EXPECT_DOUBLE_EQ(stddev(xs), std::sqrt(8.0 / 3.0));
  EXPECT_DOUBLE_EQ(stddev(xs, 1), 2.0);
  const std::vector<double> s{1, 2, 3, 4, 10};
  EXPECT_DOUBLE_EQ(sorted_quantile(s, 0.25), 2.0);
  EXPECT_DOUBLE_EQ(sorted_quantile(s, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(sorted_quantile(s, 0.9), 7.6);
  EXPECT_DOUBLE_EQ(median({4.0, 1.0, 3.0, 2.0}), 2.5);
}

TEST(Numeric, NormalCdf) {
  EXPECT_NEAR(normal_cdf(1.0), 0.8413447460685429, 1e-15);
  EXPECT_NEAR(normal_cdf(-2.5), 0.006209665325776132, 1e-15);
  EXPECT_DOUBLE_EQ(normal_cdf(0.0), 0.5);
}

TEST(Numeric, Pearson) {
  EXPECT_NEAR(pearson(std::vector<double>{1, 2, 3, 4, 5}, std::vector<double>{2, 1, 4, 3, 5}), 0.8, 1e-15);
  EXPECT_NEAR(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}), -1.0, 1e-15);
}

TEST(Numeric, MannWhitneyMatchesReference) {
  // scipy.stats.mannwhitneyu(..., alternative="greater", use_continuity=True, method="asymptotic")
  const std::vector<double> a{3.1, 4.0, 5.5, 2.2, 7.0, 4.0}, b{1.0, 2.2, 3.0, 0.5, 4.0};
  const auto r = mann_whitney_greater(a, b);
  EXPECT_DOUBLE_EQ(r.u, 25.5);
  EXPECT_NEAR(r.p_value, 0.032384484849443805, 1e-12);
}

TEST(Numeric, MannWhitneyCountsPairs) {
  Rng rng(4, 0, 0);
  std::vector<double> a, b;
  for (int i = 0; i < 30; ++i) a.push_back(static_cast<double>(rng.below(10)));
  for (int i = 0; i < 20; ++i) b.push_back(static_cast<double>(rng.below(10)));
  double pairs = 0;
  for (double x : a)
    for (double y : b) pairs += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  EXPECT_DOUBLE_EQ(mann_whitney_greater(a, b).u, pairs);
}

TEST(Numeric, BootstrapCiBracketsTheMean) {
  Rng data(5, 0, 0);
  std::vector<double> xs;
  for (int i = 0; i < 400; ++i) xs.push_back(data.uniform());
  Rng boot(5, 0, kAuxTrial);
  const auto ci = bootstrap_mean_ci(xs, 1000, boot);
  const double m = mean(xs), se = stddev(xs, 1) / std::sqrt(400.0);
  EXPECT_LT(ci.low, m);
  EXPECT_GT(ci.high, m);
  // Percentile interval width near 2 * 1.96 * se for a near-normal mean.
  EXPECT_NEAR(ci.high - ci.low, 3.92 * se, 0.8 * se);
  Rng boot2(5, 0, kAuxTrial);
  const auto again = bootstrap_mean_ci(xs, 1000, boot2);
  EXPECT_EQ(ci.low, again.low);
  EXPECT_EQ(ci.high, again.high);
}

TEST(Numeric, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.125, -2.5}) EXPECT_EQ(std::strtod(format_double(v).c_str(), nullptr), v);
  EXPECT_EQ(format_double(0.5), "0.5");
  EXPECT_EQ(format_double(-std::numeric_limits<double>::infinity()), "-inf");
}

TEST(Numeric, Fnv1a) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(hex64(fnv1a64("a")), "af63dc4c8601ec8c");
}
