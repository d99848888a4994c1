#include <gtest/gtest.h>

#include "memex/core.hpp"

using namespace memex;

TEST(Vocab, RejectsSentinelInsideVocabulary) {
  EXPECT_NO_THROW(VocabSpec(4, 4));
  EXPECT_NO_THROW(VocabSpec(4, -1));
  EXPECT_THROW(VocabSpec(4, 2), Error);
  EXPECT_THROW(VocabSpec(1, 1), Error);
}

TEST(MaskPattern, SortsAndComplements) {
  MaskPattern m(6, {4, 1, 2});
  EXPECT_EQ(m.masked(), (std::vector<Index>{1, 2, 4}));
  EXPECT_EQ(m.observed(), (std::vector<Index>{0, 3, 5}));
  EXPECT_TRUE(m.contains(2));
  EXPECT_FALSE(m.contains(3));
  EXPECT_FALSE(m.contains(99));
  EXPECT_THROW(MaskPattern(3, {0, 0}), Error);
  EXPECT_THROW(MaskPattern(3, {3}), Error);
}

TEST(MaskPattern, ApplyAndSuffix) {
  TokenSeq z{5, 6, 7, 8};
  EXPECT_EQ(MaskPattern::suffix(4, 2).apply(z, 9), (TokenSeq{5, 6, 9, 9}));
  EXPECT_EQ(MaskPattern::range(4, 1, 3).masked(), (std::vector<Index>{1, 2}));
  EXPECT_TRUE(MaskPattern::suffix(4, 4).empty());
  EXPECT_THROW(MaskPattern::suffix(3, 0).apply(z, 9), Error);
}

TEST(Hamming, CountsOnlyMaskedPositions) {
  TokenSeq a{1, 2, 3, 4}, b{1, 0, 0, 0};
  EXPECT_EQ(hamming(a.view(), b.view()), 3u);
  EXPECT_EQ(hamming(a, b, MaskPattern(4, {0, 1})), 1u);
  EXPECT_EQ(hamming(a, b, MaskPattern(4, {})), 0u);
}

TEST(TimeGrid, LinearGridPoints) {
  const auto g = make_linear_grid(4);
  EXPECT_EQ(g.times(), (std::vector<double>{1.0, 0.75, 0.5, 0.25, 0.0}));
  EXPECT_EQ(make_linear_grid(1).times(), (std::vector<double>{1.0, 0.0}));
  EXPECT_THROW(make_linear_grid(0), Error);
}

TEST(StepSizes, FloorRule) {
  // Hand-derived: k_i = floor(r_i * (t_i - t_{i+1}) / t_i) with the last step taking the rest.
  EXPECT_EQ(step_sizes(make_linear_grid(1), 10), (std::vector<std::size_t>{10}));
  EXPECT_EQ(step_sizes(make_linear_grid(2), 10), (std::vector<std::size_t>{5, 5}));
  EXPECT_EQ(step_sizes(make_linear_grid(3), 10), (std::vector<std::size_t>{3, 3, 4}));
  EXPECT_EQ(step_sizes(make_linear_grid(5), 10), (std::vector<std::size_t>{2, 2, 2, 2, 2}));
  EXPECT_EQ(step_sizes(make_linear_grid(10), 10), std::vector<std::size_t>(10, 1));
  EXPECT_EQ(step_sizes(make_linear_grid(4), 2), (std::vector<std::size_t>{0, 0, 1, 1}));
  EXPECT_EQ(step_sizes(make_linear_grid(4), 2, StepRule::at_least_one), (std::vector<std::size_t>{1, 1, 0, 0}));
}

TEST(StepSizes, RealFormMatchesIntegerForm) {
  for (std::size_t n = 1; n <= 12; ++n) {
    const auto g = make_linear_grid(n);
    for (std::size_t m = 0; m <= 25; ++m) {
      std::size_t remaining = m;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t a = tokens_to_recover(g, i, remaining);
        const std::size_t b = tokens_to_recover(g.time(i), g.time(i + 1), remaining);
        ASSERT_EQ(a, b) << "n=" << n << " m=" << m << " step=" << i;
        remaining -= a;
      }
      EXPECT_EQ(remaining, 0u);
    }
  }
}

TEST(StepSizes, IntervalGuards) {
  EXPECT_THROW(tokens_to_recover(0.5, 0.5, 3), Error);
  EXPECT_THROW(tokens_to_recover(0.5, -0.1, 3), Error);
  EXPECT_THROW(tokens_to_recover(1.5, 0.5, 3), Error);
  EXPECT_EQ(tokens_to_recover(0.3, 0.0, 7), 7u);
}

TEST(Resolution, ParseAndResolve) {
  EXPECT_EQ(Resolution::parse("max").resolve(7), 7u);
  EXPECT_EQ(Resolution::parse("per-token").resolve(0), 1u);
  EXPECT_EQ(Resolution::parse("5").resolve(7), 5u);
  EXPECT_EQ(Resolution::parse("one").label(), "1");
  EXPECT_THROW(Resolution::parse("0"), Error);
  EXPECT_THROW(Resolution::parse("5x"), Error);
  EXPECT_THROW(Resolution::parse(""), Error);
}

TEST(Partition, EvenSplitPutsRemainderFirst) {
  RecoveryOrder o{{4, 2, 0, 1, 3}};
  const auto p = even_split(o, 2);
  EXPECT_EQ(p.chunks, (std::vector<std::vector<Index>>{{4, 2, 0}, {1, 3}}));
  EXPECT_TRUE(p.respects(o));
  EXPECT_THROW(even_split(o, 6), Error);
  EXPECT_THROW(even_split(o, 0), Error);
}

TEST(Partition, ValidateCatchesOverlapAndGaps) {
  MaskPattern m(5, {0, 1, 2});
  EXPECT_NO_THROW((Partition{{{2}, {0, 1}}}).validate(m));
  EXPECT_THROW((Partition{{{0, 1}, {1, 2}}}).validate(m), Error);
  EXPECT_THROW((Partition{{{0}, {2}}}).validate(m), Error);
  EXPECT_THROW((Partition{{{0, 1, 2}, {}}}).validate(m), Error);
}

TEST(Refinement, CanonicalChain) {
  RecoveryOrder o{{0, 1, 2, 3, 4}};
  const auto chain = refinement_chain(o);
  ASSERT_EQ(chain.size(), 5u);
  EXPECT_EQ(chain[1].chunks, (std::vector<std::vector<Index>>{{0, 1, 2}, {3, 4}}));
  EXPECT_EQ(chain[2].chunks, (std::vector<std::vector<Index>>{{0, 1}, {2}, {3, 4}}));
  EXPECT_EQ(chain[3].chunks, (std::vector<std::vector<Index>>{{0}, {1}, {2}, {3, 4}}));
  for (std::size_t i = 1; i < chain.size(); ++i) {
    EXPECT_TRUE(is_refinement(chain[i], chain[i - 1]));
    EXPECT_FALSE(is_refinement(chain[i - 1], chain[i]));
    EXPECT_EQ(chain[i].size(), i + 1);
  }
  EXPECT_THROW(split_one(chain.back()), Error);
}

TEST(Refinement, RejectsReorderedChunks) {
  Partition coarse{{{0, 1}, {2, 3}}};
  EXPECT_TRUE(is_refinement(Partition{{{1}, {0}, {3, 2}}}, coarse));
  EXPECT_FALSE(is_refinement(Partition{{{2}, {0, 1}, {3}}}, coarse));
  EXPECT_THROW(is_refinement(Partition{{{0}, {1}}}, coarse), Error);
}
