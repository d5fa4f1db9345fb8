#include "support/small_model.hpp"
#include "vpfc/decode/policies.hpp"
#include "vpfc/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace vpfc::decode {
namespace {

Vec v2(double a, double b) { return (Vec(2) << a, b).finished(); }

// Two-way softmax written out by hand.
Vec hand_softmax(double a, double b) {
  const double ea = std::exp(a);
  const double eb = std::exp(b);
  return v2(ea / (ea + eb), eb / (ea + eb));
}

Vec random_logits(Rng& rng, int n) {
  Vec v(n);
  for (int i = 0; i < n; ++i) {
    v[i] = 4.0 * rng.normal();
  }
  return v;
}

TEST(Sid, HandSoftmax) {
  const Vec p = sid_distribution(v2(1, 0), v2(0, 1), 1.0);
  EXPECT_NEAR(p[0], 0.95257, 1e-5);
  EXPECT_NEAR(p[1], 0.04743, 1e-5);
  EXPECT_LE((p - hand_softmax(2, -1)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Sid, AlphaZeroIsPlainSoftmax) {
  EXPECT_LE((sid_distribution(v2(0.3, -1.2), v2(5, 5), 0.0) - hand_softmax(0.3, -1.2)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Enh, HandSoftmax) {
  const Vec p = enh_distribution(v2(0, 0), v2(1, -1), 0.5);
  EXPECT_NEAR(p[0], 0.73106, 1e-5);
  EXPECT_NEAR(p[1], 0.26894, 1e-5);
}

TEST(Enh, BetaEndpoints) {
  EXPECT_LE((enh_distribution(v2(0.7, 0.1), v2(3, -2), 0.0) - hand_softmax(0.7, 0.1)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((enh_distribution(v2(0.7, 0.1), v2(3, -2), 1.0) - hand_softmax(3, -2)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Vcd, HandValues) {
  EXPECT_LE((vcd_distribution(v2(1, 0), v2(0, 1), 1.0) - hand_softmax(2, -1)).cwiseAbs().maxCoeff(), 1e-15);
  for (double lambda : {0.0, 0.5, 3.0}) {
    EXPECT_LE((vcd_distribution(v2(1, 0), v2(1, 0), lambda) - hand_softmax(1, 0)).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Distributions, LengthMismatchThrows) {
  EXPECT_THROW(sid_distribution(Vec::Zero(3), Vec::Zero(2), 1.0), ConfigError);
  EXPECT_THROW(enh_distribution(Vec::Zero(3), Vec::Zero(2), 1.0), ConfigError);
  EXPECT_THROW(vcd_distribution(Vec::Zero(0), Vec::Zero(0), 1.0), ConfigError);
}

TEST(Distributions, ValidAndShiftInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec a = random_logits(rng, 39);
    const Vec b = random_logits(rng, 39);
    const double c = 50.0 * rng.normal();
    const Vec ac = (a.array() + c).matrix();
    const Vec bc = (b.array() + c).matrix();
    const double k = 3.0 * rng.uniform();
    const std::pair<Vec, Vec> pairs[] = {
        {sid_distribution(a, b, k), sid_distribution(ac, bc, k)},
        {enh_distribution(a, b, k), enh_distribution(ac, bc, k)},
        {vcd_distribution(a, b, k), vcd_distribution(ac, bc, k)},
    };
    for (const auto& [p, q] : pairs) {
      EXPECT_NEAR(p.sum(), 1.0, 1e-12);
      EXPECT_GE(p.minCoeff(), 0.0);
      EXPECT_LE((p - q).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Duality, MidpointIdentityHolds) {
  Rng rng(99);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Vec hi = random_logits(rng, 39);
    const Vec lo = random_logits(rng, 39);
    for (double alpha : {0.5, 1.0, 2.0}) {
      worst = std::max(worst, duality_check(hi, lo, alpha));
    }
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(Duality, ZeroStrengthIsExact) {
  Rng rng(1);
  EXPECT_EQ(duality_check(random_logits(rng, 10), random_logits(rng, 10), 0.0), 0.0);
}

TEST(Duality, NonMidpointGenerallyDeviates) {
  Rng rng(2);
  const Vec hi = random_logits(rng, 10);
  const Vec lo = random_logits(rng, 10);
  const Vec full = random_logits(rng, 10);
  EXPECT_GT(duality_deviation(full, hi, lo, 1.0), 1e-6);
}

model::PromptInput grid_input(int g) {
  model::PromptInput in;
  in.visual.grid_side = g;
  in.visual.embeddings = Mat::Zero(g * g, 4);
  in.text = {0, 1};
  return in;
}

TEST(MaskByImportance, LowKeepsBottomRanks) {
  const auto in = grid_input(8);
  Vec imp(64);
  for (int i = 0; i < 64; ++i) {
    imp[i] = i;
  }
  const auto low = mask_by_importance(in, imp, 0.25, MaskRole::Low);
  const auto high = mask_by_importance(in, imp, 0.25, MaskRole::High);
  EXPECT_EQ(low.kept(), 16);
  for (int i = 0; i < 64; ++i) {
    EXPECT_EQ(low.keep[static_cast<std::size_t>(i)], i < 16 ? 1 : 0);
    EXPECT_EQ(high.keep[static_cast<std::size_t>(i)], i >= 48 ? 1 : 0);
  }
  EXPECT_EQ(low.input.visual_keep, low.keep);
}

TEST(MaskByImportance, LowAndHighDisjoint) {
  Rng rng(3);
  const auto in = grid_input(8);
  for (double p : {0.1, 0.25, 0.5}) {
    Vec imp(64);
    for (int i = 0; i < 64; ++i) {
      imp[i] = std::floor(4.0 * rng.uniform());
    }
    const auto low = mask_by_importance(in, imp, p, MaskRole::Low);
    const auto high = mask_by_importance(in, imp, p, MaskRole::High);
    EXPECT_EQ(low.kept(), static_cast<int>(std::lround(p * 64)));
    for (int i = 0; i < 64; ++i) {
      EXPECT_FALSE(low.keep[static_cast<std::size_t>(i)] && high.keep[static_cast<std::size_t>(i)]);
    }
  }
}

TEST(MaskByImportance, KeepingAllLeavesInputUnchanged) {
  const auto in = grid_input(4);
  const auto all = mask_by_importance(in, Vec::Ones(16), 1.0, MaskRole::Low);
  EXPECT_EQ(all.kept(), 16);
  EXPECT_TRUE(all.input.visual_keep.empty());
}

TEST(Distorted, SigmaZeroAndSeedReuse) {
  auto in = grid_input(4);
  Rng rng(4);
  for (Eigen::Index i = 0; i < in.visual.embeddings.size(); ++i) {
    in.visual.embeddings.data()[i] = rng.normal();
  }
  EXPECT_TRUE(make_v_distorted(in, 0.0, 1).input.visual.embeddings == in.visual.embeddings);
  EXPECT_TRUE(make_v_distorted(in, 0.5, 9).input.visual.embeddings ==
              make_v_distorted(in, 0.5, 9).input.visual.embeddings);
  EXPECT_FALSE(make_v_distorted(in, 0.5, 9).input.visual.embeddings ==
               make_v_distorted(in, 0.5, 10).input.visual.embeddings);
  EXPECT_THROW(make_v_distorted(in, -1.0, 1), ConfigError);
}

TEST(Distorted, EmpiricalStdWithinFivePercent) {
  const auto in = grid_input(4);
  const double sigma = 0.7;
  // per-coordinate spread over 10^4 independent seeds
  double sum = 0.0;
  double sq = 0.0;
  const int draws = 10000;
  for (int s = 0; s < draws; ++s) {
    const double x = make_v_distorted(in, sigma, static_cast<std::uint64_t>(s)).input.visual.embeddings(5, 2);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / draws;
  const double sd = std::sqrt(sq / draws - mean * mean);
  EXPECT_NEAR(sd, sigma, 0.05 * sigma);
  EXPECT_NEAR(mean, 0.0, 0.05);
}

TEST(Params, Validation) {
  PolicyParams p;
  EXPECT_NO_THROW(p.validate());
  p.p = 1.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.alpha_contrast = -1.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.sigma = NAN;
  EXPECT_THROW(p.validate(), ConfigError);
  EXPECT_EQ(parse_policy("enh"), Policy::Enh);
  EXPECT_THROW(parse_policy("beam"), ConfigError);
}

class DecodeTest : public ::testing::Test {
 protected:
  model::ModelConfig cfg = [] {
    auto c = testing::small_config(17);
    c.num_layers = 3;
    return c;
  }();
  model::ModelWeights w = model::ModelWeights::initialize(cfg);
};

TEST_F(DecodeTest, RegularMatchesGreedy) {
  const auto in = testing::random_prompt(cfg, 2);
  PolicyParams p;
  EXPECT_EQ(decode_with_policy(w, in, p, 4).decoded.tokens, model::greedy_decode(w, in, {}, 4).tokens);
}

TEST_F(DecodeTest, ZeroStrengthContrastsMatchGreedy) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto in = testing::random_prompt(cfg, 50 + s);
    const auto base = model::greedy_decode(w, in, {}, 3).tokens;
    PolicyParams p;
    p.alpha_contrast = 0.0;
    p.beta = 0.0;
    for (Policy pol : {Policy::Vcd, Policy::Sid, Policy::Enh}) {
      p.policy = pol;
      EXPECT_EQ(decode_with_policy(w, in, p, 3).decoded.tokens, base) << to_string(pol);
    }
  }
}

TEST_F(DecodeTest, FirstStepMatchesDistributionFormula) {
  const auto in = testing::random_prompt(cfg, 8);
  PolicyParams p;
  p.policy = Policy::Sid;
  p.alpha_contrast = 2.0;
  const auto out = decode_with_policy(w, in, p, 1);
  const auto full = model::forward(w, in);
  const auto low = model::forward(w, make_v_low(w, in, p.p, p.importance_layer).input);
  const int pos = full.layout.answer_position();
  const Vec expect = sid_distribution(full.logits.row(pos).transpose(), low.logits.row(pos).transpose(), 2.0);
  ASSERT_EQ(out.decoded.distributions.size(), 1u);
  EXPECT_LE((out.decoded.distributions[0] - expect).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(out.decoded.tokens[0], model::argmax(expect));
}

TEST_F(DecodeTest, VpfcCarriesRecord) {
  auto in = testing::random_prompt(cfg, 3, 3);
  in.query_object_pos = 1;
  PolicyParams p;
  p.policy = Policy::Vpfc;
  p.vpfc.localization_heads = 2;
  const auto out = decode_with_policy(w, in, p, 1);
  ASSERT_TRUE(out.record.has_value());
  EXPECT_EQ(out.record->output_tokens, out.decoded.tokens);
}

}  // namespace
}  // namespace vpfc::decode
