#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "memex/engine.hpp"
#include "memex/synth.hpp"
#include "memex/toymodel.hpp"

using namespace memex;

namespace {

PosteriorModel two_component(double w0 = 1.0, double w1 = 1.0) {
  Corpus c;
  c.add(TokenSeq{0, 0}, w0);
  c.add(TokenSeq{1, 1}, w1);
  return fit(c, 0.2, VocabSpec::with_size(2));
}

std::vector<std::size_t> nonzero(std::vector<std::size_t> v) {
  std::erase(v, 0u);
  return v;
}

}  // namespace

TEST(ForwardMask, EndpointsAndRate) {
  const TokenSeq z{1, 2, 3, 1, 2, 3, 1, 2};
  Rng rng(1, 0, 0);
  EXPECT_EQ(forward_mask(z, 0.0, 9, rng), z);
  const auto all = forward_mask(z, 1.0, 9, rng);
  for (Token t : all) EXPECT_EQ(t, 9);
  std::size_t masked = 0, total = 0;
  for (int r = 0; r < 5000; ++r) {
    const auto zt = forward_mask(z, 0.3, 9, rng);
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (zt[i] == 9) ++masked;
      else EXPECT_EQ(zt[i], z[i]);
      ++total;
    }
  }
  const double rate = static_cast<double>(masked) / static_cast<double>(total);
  EXPECT_NEAR(rate, 0.3, 5 * std::sqrt(0.3 * 0.7 / static_cast<double>(total)));
  EXPECT_THROW(forward_mask(z, 1.5, 9, rng), Error);
}

TEST(ReverseGenerate, HandComputedPz) {
  const auto m = two_component();
  const TokenSeq z{0, 0};
  const MaskPattern mask(2, {0, 1});
  SamplerConfig s;
  for (std::uint32_t trial = 0; trial < 20; ++trial) {
    Rng a(5, 0, trial), b(5, 0, trial);
    // One step: both tokens from the empty context, 0.5 each.
    EXPECT_NEAR(reverse_generate(m, z, mask, make_linear_grid(1), s, a).pz(), 0.25, 1e-15);
    // Two steps: 0.5, then 0.9*0.9 + 0.1*0.1.
    EXPECT_NEAR(reverse_generate(m, z, mask, make_linear_grid(2), s, b).pz(), 0.41, 1e-15);
  }
}

TEST(ReverseGenerate, WeightedPriorPzIsTrialInvariant) {
  // prior (0.1, 0.9): first token 0.1*0.9 + 0.9*0.1 = 0.18; then the posterior is even, 0.5.
  const auto m = two_component(1.0, 9.0);
  const TokenSeq z{0, 0};
  const MaskPattern mask(2, {0, 1});
  SamplerConfig s;
  for (std::uint32_t trial = 0; trial < 50; ++trial) {
    Rng rng(9, 0, trial);
    const auto rec = reverse_generate(m, z, mask, make_linear_grid(2), s, rng);
    EXPECT_NEAR(rec.pz(), 0.09, 1e-15);
    ASSERT_EQ(rec.conditionals.size(), 2u);
    EXPECT_NEAR(rec.conditionals[0].probability, 0.18, 1e-15);
    EXPECT_NEAR(rec.conditionals[1].probability, 0.5, 1e-15);
    EXPECT_TRUE(rec.complete());
  }
}

TEST(ReverseGenerate, ObservedPositionsNeverChange) {
  Rng data(2, 0, 0);
  Corpus c;
  for (int j = 0; j < 6; ++j) c.add(synth::random_sequence(data, 12, 5));
  const auto m = fit(c, 0.3, VocabSpec::with_size(5));
  const TokenSeq z = c.sequences[2];
  const MaskPattern mask(12, {1, 4, 5, 9, 11});
  for (auto rule : {PositionRule::random_uniform, PositionRule::greedy_confidence, PositionRule::left_to_right}) {
    SamplerConfig s;
    s.position_rule = rule;
    for (std::size_t n : {1, 2, 3, 5}) {
      Rng rng(3, 0, static_cast<std::uint32_t>(n));
      const auto rec = reverse_generate(m, z, mask, make_linear_grid(n), s, rng);
      for (Index i : mask.observed()) EXPECT_EQ(rec.generated[i], z[i]);
      for (Index i : mask.masked()) EXPECT_NE(rec.generated[i], m.vocab().mask_id);
      std::size_t recovered = 0;
      for (auto k : rec.step_sizes) recovered += k;
      EXPECT_EQ(recovered, mask.count());
      EXPECT_EQ(rec.step_sizes, step_sizes(make_linear_grid(n), mask.count()));
      EXPECT_EQ(rec.hamming, hamming(rec.generated, z, mask));
    }
  }
}

TEST(ReverseGenerate, ZeroStepsConsumeNoRandomness) {
  Rng data(4, 0, 0);
  Corpus c;
  for (int j = 0; j < 8; ++j) c.add(synth::random_sequence(data, 14, 4));
  const auto m = fit(c, 0.2, VocabSpec::with_size(4));
  const TokenSeq z = c.sequences[0];
  const MaskPattern mask(14, {0, 1, 2, 3, 5, 6, 8, 9, 10, 12});
  // Find two resolutions whose step sizes agree once the zero steps are dropped.
  std::size_t a = 0, b = 0;
  for (std::size_t n1 = 1; n1 <= 30 && !a; ++n1)
    for (std::size_t n2 = n1 + 1; n2 <= 30; ++n2)
      if (nonzero(step_sizes(make_linear_grid(n1), 10)) == nonzero(step_sizes(make_linear_grid(n2), 10))) {
        a = n1;
        b = n2;
        break;
      }
  ASSERT_GT(a, 0u);
  SamplerConfig s;
  for (std::uint32_t trial = 0; trial < 10; ++trial) {
    Rng r1(8, 1, trial), r2(8, 1, trial);
    const auto x = reverse_generate(m, z, mask, make_linear_grid(a), s, r1);
    const auto y = reverse_generate(m, z, mask, make_linear_grid(b), s, r2);
    EXPECT_EQ(x.log_pz, y.log_pz);
    EXPECT_EQ(x.generated, y.generated);
    EXPECT_EQ(x.chunks, y.chunks);
  }
}

TEST(ReverseGenerate, GroundTruthContextAfterWrongCommit) {
  // Heavy noise makes wrong commits common. The recorded conditionals must still
  // equal the fixed-partition product on the realized chunks.
  Rng data(6, 0, 0);
  Corpus c;
  for (int j = 0; j < 4; ++j) c.add(synth::random_sequence(data, 6, 3));
  const auto m = fit(c, 0.7, VocabSpec::with_size(3));
  const TokenSeq z = c.sequences[1];
  const MaskPattern mask(6, {0, 2, 3, 5});
  SamplerConfig s;
  std::size_t wrong = 0;
  for (std::uint32_t trial = 0; trial < 40; ++trial) {
    Rng rng(7, 0, trial);
    const auto rec = reverse_generate(m, z, mask, make_linear_grid(4), s, rng);
    if (!rec.exact_match) ++wrong;
    std::vector<Token> ctx = mask.apply(z, m.vocab().mask_id).tokens();
    double lp = 0;
    for (const auto& chunk : rec.chunks.chunks) {
      std::vector<Index> t(chunk.begin(), chunk.end());
      std::sort(t.begin(), t.end());
      const auto d = m.predict(TokenSeq(ctx), t);
      for (std::size_t i = 0; i < t.size(); ++i) lp += std::log(d[i][static_cast<std::size_t>(z[t[i]])]);
      for (Index i : t) ctx[i] = z[i];
    }
    EXPECT_NEAR(rec.log_pz, lp, 1e-12);
  }
  EXPECT_GT(wrong, 0u);
}

TEST(ArmGenerate, MatchesLeftToRightDiffusionOnSuffix) {
  Rng data(10, 0, 0);
  Corpus c;
  for (int j = 0; j < 5; ++j) c.add(synth::random_sequence(data, 8, 4));
  const auto m = fit(c, 0.25, VocabSpec::with_size(4));
  const TokenSeq z = c.sequences[3];
  const TokenSeq prefix(std::vector<Token>(z.begin(), z.begin() + 3));
  const TokenSeq suffix(std::vector<Token>(z.begin() + 3, z.end()));
  const MaskPattern mask = MaskPattern::suffix(8, 3);
  SamplerConfig s;
  s.position_rule = PositionRule::left_to_right;
  for (std::uint32_t trial = 0; trial < 10; ++trial) {
    Rng r1(11, 0, trial), r2(11, 0, trial);
    const auto arm = arm_generate(m, prefix, suffix, s, r1);
    const auto dif = reverse_generate(m, z, mask, make_linear_grid(5), s, r2);
    EXPECT_NEAR(arm.log_pz, dif.log_pz, 1e-12);
    EXPECT_EQ(arm.generated, dif.generated);
    EXPECT_EQ(arm.mask, mask);
  }
}

TEST(Trace, HeaderAndRecordFields) {
  const auto m = two_component();
  SamplerConfig s;
  Rng rng(1, 0, 0);
  const auto rec = reverse_generate(m, TokenSeq{0, 0}, MaskPattern(2, {0, 1}), make_linear_grid(2), s, rng);
  std::ostringstream out;
  write_trace_header(out);
  write_trace(out, rec, "ex0");
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  const auto head = nlohmann::json::parse(line);
  EXPECT_EQ(head["schema"], "memex.trace/1");
  EXPECT_EQ(head["index_base"], 0);
  std::getline(in, line);
  const auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j["id"], "ex0");
  EXPECT_EQ(j["mask"], nlohmann::json::array({0, 1}));
  EXPECT_EQ(j["step_sizes"], nlohmann::json::array({1, 1}));
  EXPECT_NEAR(std::exp(j["log_pz"].get<double>()), 0.41, 1e-12);
  EXPECT_EQ(j["conditionals"].size(), 2u);
}
