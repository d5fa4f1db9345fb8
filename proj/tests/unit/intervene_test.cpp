#include "support/small_model.hpp"
#include "vpfc/errors.hpp"
#include "vpfc/intervene/intervene.hpp"

#include <gtest/gtest.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace vpfc::intervene {
namespace {

using testing::random_prompt;
using testing::small_config;

model::ModelConfig wide_config(std::uint64_t seed = 7) {
  auto c = small_config(seed);
  c.num_layers = 2;
  c.num_heads = 4;
  return c;
}

std::vector<char> flags(int n, const std::vector<int>& on) {
  std::vector<char> f(static_cast<std::size_t>(n), 0);
  for (int i : on) {
    f[static_cast<std::size_t>(i)] = 1;
  }
  return f;
}

TEST(EnhanceRow, FactorZeroLeavesRow) {
  std::vector<double> row = {0.2, 0.3, 0.5};
  const auto before = row;
  enhance_row(row, flags(3, {0, 1}), 0.0);
  EXPECT_EQ(row, before);
}

TEST(EnhanceRow, HandArithmetic) {
  std::vector<double> row = {0.5, 0.5};
  enhance_row(row, flags(2, {0}), 0.05);
  EXPECT_NEAR(row[0], 0.525 / 1.025, 1e-15);
  EXPECT_NEAR(row[0], 0.51220, 1e-5);
  EXPECT_NEAR(row[1], 0.48780, 1e-5);
}

TEST(EnhanceRow, ThousandRandomRowsSumToOne) {
  Rng rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> row(20);
    double z = 0.0;
    for (double& x : row) {
      x = rng.uniform();
      z += x;
    }
    for (double& x : row) {
      x /= z;
    }
    std::vector<char> target(16);
    for (char& c : target) {
      c = rng.bernoulli(0.3) ? 1 : 0;
    }
    enhance_row(row, target, 3.0 * rng.uniform(), 2);
    double s = 0.0;
    for (double x : row) {
      s += x;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(EnhanceAttention, HookRowsStayStochasticAndMoveMassToTarget) {
  const auto c = wide_config();
  const auto w = model::ModelWeights::initialize(c);
  const auto in = random_prompt(c, 4);
  const auto base = model::forward(w, in);
  for (double f : {0.0, 0.05, 0.5, 2.0}) {
    EnhancementSpec spec;
    spec.target = flags(16, {0, 1, 2, 3});
    spec.factor = f;
    spec.scope = text_scope(base.layout);
    const auto trace = model::forward(w, in, enhance_attention(spec));
    for (const Mat& a : trace.attention) {
      for (int i = 0; i < trace.length(); ++i) {
        EXPECT_NEAR(a.row(i).sum(), 1.0, 1e-9);
      }
    }
    const int q = base.layout.answer_position();
    const double before = base.attention_map(1, 0).row(q).head(4).sum();
    const double after = trace.attention_map(1, 0).row(q).head(4).sum();
    if (f == 0.0) {
      EXPECT_TRUE(trace.logits == base.logits);
    } else {
      EXPECT_NE(after, before);
    }
  }
}

TEST(EnhanceAttention, EmptyTargetIsIdentity) {
  EnhancementSpec spec;
  spec.target = flags(16, {});
  spec.factor = 1.0;
  EXPECT_TRUE(enhance_attention(spec).empty());
  spec.factor = -1.0;
  EXPECT_THROW(enhance_attention(spec), ConfigError);
}

TEST(EnhanceAttention, PreSoftmaxModeUsesScoreHook) {
  EnhancementSpec spec;
  spec.target = flags(16, {1});
  spec.factor = 0.5;
  spec.mode = EnhanceMode::PreSoftmaxScale;
  const auto hooks = enhance_attention(spec);
  ASSERT_TRUE(hooks.score.has_value());
  EXPECT_FALSE(hooks.attention.has_value());
  std::vector<double> row = {2.0, 4.0, -INFINITY};
  hooks.score->edit({0, 0, 0}, row);
  EXPECT_EQ(row[0], 2.0);
  EXPECT_EQ(row[1], 6.0);
}

TEST(SteeringDirection, ZeroProbeOrEmptyRegionGivesZero) {
  const auto c = wide_config();
  const auto w = model::ModelWeights::initialize(c);
  const auto in = random_prompt(c, 6);
  for (const auto& f : {steering_direction(w, in, flags(16, {5, 6}), 0.0),
                        steering_direction(w, in, flags(16, {}), 0.05)}) {
    ASSERT_EQ(f.delta.size(), 8u);
    for (const Vec& d : f.delta) {
      EXPECT_EQ(d.cwiseAbs().maxCoeff(), 0.0);
    }
  }
}

TEST(SteeringDirection, MatchesTraceDifference) {
  const auto c = wide_config(13);
  const auto w = model::ModelWeights::initialize(c);
  const auto in = random_prompt(c, 7);
  const auto region = flags(16, {4, 5, 8, 9});
  const auto field = steering_direction(w, in, region, 0.05);
  const auto base = model::forward(w, in);
  EnhancementSpec spec;
  spec.target = region;
  spec.factor = 0.05;
  spec.scope.position_begin = base.layout.prompt_begin;
  const auto plus = model::forward(w, in, enhance_attention(spec));
  const int pos = base.layout.answer_position();
  double largest = 0.0;
  for (int l = 0; l < 2; ++l) {
    for (int h = 0; h < 4; ++h) {
      const Vec manual = (plus.head_state(l, h).row(pos) - base.head_state(l, h).row(pos)).transpose();
      EXPECT_LE((field.at(l, h) - manual).cwiseAbs().maxCoeff(), 1e-12);
      largest = std::max(largest, manual.norm());
    }
  }
  EXPECT_GT(largest, 0.0);
}

TEST(ApplySteering, HandArithmetic) {
  SteeringField field;
  field.num_heads = 1;
  field.delta = {(Vec(2) << 0.5, -0.5).finished()};
  const auto hooks = apply_steering(field, {{0, 0}}, 4.0, 0);
  ASSERT_TRUE(hooks.state.has_value());
  std::vector<double> h = {1.0, 2.0};
  hooks.state->edit({0, 0, 3}, h);
  EXPECT_EQ(h, (std::vector<double>{3.0, 0.0}));
}

TEST(ApplySteering, ZeroAlphaOrNoHeadsIsIdentity) {
  SteeringField field;
  field.num_heads = 1;
  field.delta = {Vec::Ones(2)};
  EXPECT_TRUE(apply_steering(field, {{0, 0}}, 0.0, 0).empty());
  EXPECT_TRUE(apply_steering(field, {}, 4.0, 0).empty());
  EXPECT_THROW(apply_steering(field, {{0, 1}}, 4.0, 0), ConfigError);
}

TEST(ApplySteering, OnlySelectedHeadsFromAnswerPositionOn) {
  const auto c = wide_config(2);
  const auto w = model::ModelWeights::initialize(c);
  const auto in = random_prompt(c, 9);
  const auto base = model::forward(w, in);
  SteeringField field;
  field.num_heads = 4;
  field.delta.assign(8, Vec::Ones(c.head_dim()));
  const int pos = base.layout.answer_position();
  const auto steered = model::forward(w, in, apply_steering(field, {{0, 2}}, 1.0, pos));
  for (int h = 0; h < 4; ++h) {
    const Mat diff = steered.head_state(0, h) - base.head_state(0, h);
    EXPECT_EQ(diff.topRows(pos).cwiseAbs().maxCoeff(), 0.0);
    if (h == 2) {
      EXPECT_NEAR(diff(pos, 0), 1.0, 1e-12);
    } else {
      EXPECT_EQ(diff.cwiseAbs().maxCoeff(), 0.0);
    }
  }
}

TEST(HeadImportance, SingleEntryAndZeroGrad) {
  std::vector<Mat> a = {Mat::Zero(2, 2), Mat::Constant(2, 2, 0.5)};
  std::vector<Mat> g = {Mat::Zero(2, 2), Mat::Zero(2, 2)};
  a[0](1, 0) = 0.5;
  g[0](1, 0) = -2.0;
  const auto imp = importance_from(a, g, 1, 2);
  EXPECT_EQ(imp.at(0, 0), 1.0);
  EXPECT_EQ(imp.at(0, 1), 0.0);
}

TEST(HeadImportance, MatchesNaiveDoubleLoop) {
  const auto c = wide_config(21);
  const auto w = model::ModelWeights::initialize(c);
  const auto in = random_prompt(c, 3);
  const auto trace = model::forward(w, in);
  const model::LossSpec loss{2, trace.layout.answer_position(), 1.0};
  const auto imp = head_importance(w, in, loss);
  const auto grads = model::backward_attention(w, in, {}, loss);
  for (int l = 0; l < 2; ++l) {
    for (int h = 0; h < 4; ++h) {
      double naive = 0.0;
      const Mat& a = trace.attention_map(l, h);
      const Mat& g = grads.at(l, h);
      for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < a.cols(); ++j) {
          naive += std::fabs(a(i, j) * g(i, j));
        }
      }
      EXPECT_NEAR(imp.at(l, h), naive, 1e-10);
      EXPECT_GE(imp.at(l, h), 0.0);
    }
  }
}

HeadImportance table(int layers, int heads, std::vector<double> values) {
  HeadImportance imp;
  imp.num_layers = layers;
  imp.num_heads = heads;
  imp.values = std::move(values);
  return imp;
}

TEST(SelectHeads, CountsFollowGamma) {
  Rng rng(1);
  std::vector<double> v(32);
  for (double& x : v) {
    x = rng.uniform();
  }
  const auto imp = table(4, 8, v);
  EXPECT_EQ(select_heads(imp, 1.0).size(), 32u);
  EXPECT_EQ(select_heads(imp, 0.25).size(), 8u);
  EXPECT_EQ(select_heads(imp, 0.01).size(), 1u);
  EXPECT_THROW(select_heads(imp, 0.0), ConfigError);
}

TEST(SelectHeads, MatchesFullSortAndIsMonotoneInGamma) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    std::vector<double> v(32);
    for (double& x : v) {
      x = std::floor(rng.uniform() * 8.0);
    }
    const auto imp = table(4, 8, v);
    std::vector<HeadId> all;
    for (int i = 0; i < 32; ++i) {
      all.push_back({i / 8, i % 8});
    }
    std::sort(all.begin(), all.end(), [&](const HeadId& a, const HeadId& b) {
      const double x = imp.at(a.layer, a.head);
      const double y = imp.at(b.layer, b.head);
      return x > y || (x == y && a < b);
    });
    std::vector<HeadId> prev;
    for (double g : {0.125, 0.25, 0.5, 0.75, 1.0}) {
      const auto sel = select_heads(imp, g);
      EXPECT_EQ(sel, std::vector<HeadId>(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(sel.size())));
      for (const auto& h : prev) {
        EXPECT_NE(std::find(sel.begin(), sel.end(), h), sel.end());
      }
      prev = sel;
    }
  }
}

class PipelineTest : public ::testing::Test {
 protected:
  model::ModelConfig cfg = [] {
    auto c = wide_config(31);
    c.num_layers = 3;
    return c;
  }();
  model::ModelWeights w = model::ModelWeights::initialize(cfg);

  model::PromptInput prompt(std::uint64_t seed) {
    auto in = random_prompt(cfg, seed, 3);
    in.query_object_pos = 1;
    return in;
  }
};

TEST_F(PipelineTest, DefaultsRunAndRecordEverything) {
  VpfcParams p;
  const auto r = vpfc_pipeline(w, prompt(1), p, 2);
  const auto& rec = r.record;
  EXPECT_EQ(r.output.tokens.size(), 2u);
  EXPECT_EQ(rec.localization_heads.size(), 8u);
  for (const auto& h : rec.localization_heads) {
    EXPECT_GE(h.layer, 1);
  }
  EXPECT_EQ(rec.mask.count(), 4);
  ASSERT_TRUE(rec.region.has_value());
  EXPECT_EQ(rec.region->side, 2);
  EXPECT_EQ(rec.selected_heads.size(), 3u);  // floor(0.25 * 12)
  EXPECT_EQ(rec.delta_norms.size(), 12u);
  EXPECT_EQ(rec.importance.loss.target, rec.baseline_token);
  const auto doc = nlohmann::json::parse(rec.to_json());
  for (const char* key : {"summary", "hcvr_cells", "centroid", "region", "importance", "selected_heads",
                          "delta_norms", "output_tokens"}) {
    EXPECT_TRUE(doc.contains(key)) << key;
  }
}

TEST_F(PipelineTest, NoOpChainMatchesBaseline) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto in = prompt(100 + s);
    const auto base = model::greedy_decode(w, in, {}, 3);
    VpfcParams zero_alpha;
    zero_alpha.alpha_steer = 0.0;
    VpfcParams zero_probe;
    zero_probe.probe_factor = 0.0;
    EXPECT_EQ(vpfc_pipeline(w, in, zero_alpha, 3).output.tokens, base.tokens);
    const auto r = vpfc_pipeline(w, in, zero_probe, 3);
    EXPECT_EQ(r.output.tokens, base.tokens);
    for (double n : r.record.delta_norms) {
      EXPECT_EQ(n, 0.0);
    }
    for (std::size_t i = 0; i < base.distributions.size(); ++i) {
      EXPECT_TRUE(r.output.distributions[i] == base.distributions[i]);
    }
  }
}

TEST_F(PipelineTest, CentroidOffUsesRawMask) {
  VpfcParams p;
  p.centroid_mode = false;
  const auto r = vpfc_pipeline(w, prompt(3), p);
  EXPECT_FALSE(r.record.region.has_value());
  EXPECT_EQ(r.record.target, r.record.mask.cells);
}

TEST_F(PipelineTest, InvalidParamsRejected) {
  VpfcParams p;
  p.gamma = 0.0;
  EXPECT_THROW(vpfc_pipeline(w, prompt(3), p), ConfigError);
  p = {};
  p.localization_heads = 100;
  EXPECT_THROW(vpfc_pipeline(w, prompt(3), p), ConfigError);
}

TEST_F(PipelineTest, StageErrorsNameTheStage) {
  auto in = prompt(4);
  in.text.assign(40, 1);
  try {
    vpfc_pipeline(w, in, {});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("baseline"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace vpfc::intervene
