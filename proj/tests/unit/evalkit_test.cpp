#include "vpfc/errors.hpp"
#include "vpfc/eval/metrics.hpp"
#include "vpfc/rng.hpp"

#include <gtest/gtest.h>

#include <json.hpp>

#include <algorithm>

namespace vpfc::eval {
namespace {

using scene::PopeLabel;

std::vector<Prediction> fixture(int tp, int fp, int fn, int tn, int other = 0) {
  std::vector<Prediction> out;
  auto add = [&](int n, Answer a, PopeLabel t) {
    for (int i = 0; i < n; ++i) {
      out.push_back({static_cast<int>(out.size()), a, t});
    }
  };
  add(tp, Answer::Yes, PopeLabel::Present);
  add(fp, Answer::Yes, PopeLabel::Absent);
  add(fn, Answer::No, PopeLabel::Present);
  add(tn, Answer::No, PopeLabel::Absent);
  add(other, Answer::Other, PopeLabel::Present);
  return out;
}

TEST(PopeMetrics, HandConfusionMatrix) {
  const auto r = pope_metrics(fixture(2, 1, 1, 2));
  EXPECT_EQ(r.total, 6);
  EXPECT_EQ(r.accuracy, 4.0 / 6.0);
  EXPECT_EQ(r.precision, 2.0 / 3.0);
  EXPECT_EQ(r.recall, 2.0 / 3.0);
  EXPECT_NEAR(r.f1, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(r.omission(), 1);
  EXPECT_EQ(r.fabrication(), 1);
  EXPECT_FALSE(r.precision_undefined);
  EXPECT_FALSE(r.recall_undefined);
}

TEST(PopeMetrics, AllCorrect) {
  const auto r = pope_metrics(fixture(3, 0, 0, 3));
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.omission(), 0);
  EXPECT_EQ(r.fabrication(), 0);
  EXPECT_EQ(r.f1, 1.0);
}

TEST(PopeMetrics, AllOtherSetsFlags) {
  const auto r = pope_metrics(fixture(0, 0, 0, 0, 5));
  EXPECT_EQ(r.accuracy, 0.0);
  EXPECT_TRUE(r.precision_undefined);
  EXPECT_EQ(r.precision, 0.0);
  EXPECT_TRUE(r.recall_undefined);
  EXPECT_EQ(r.recall, 0.0);
  EXPECT_EQ(r.other(), 5);
  EXPECT_EQ(r.omission(), 0);
}

TEST(PopeMetrics, NoPresentQuestionsLeavesRecallUndefined) {
  const auto r = pope_metrics(fixture(0, 1, 0, 1));
  EXPECT_TRUE(r.recall_undefined);
  EXPECT_EQ(r.precision, 0.0);
}

TEST(PopeMetrics, Errors) {
  EXPECT_THROW(pope_metrics({}), ConfigError);
  auto preds = fixture(1, 1, 0, 0);
  preds[1].question_id = preds[0].question_id;
  EXPECT_THROW(pope_metrics(preds), ConfigError);
}

std::vector<Prediction> random_predictions(Rng& rng, int n) {
  std::vector<Prediction> out;
  for (int i = 0; i < n; ++i) {
    const auto a = static_cast<Answer>(rng.below(3));
    out.push_back({i * 3 + 1, a, rng.bernoulli(0.5) ? PopeLabel::Present : PopeLabel::Absent});
  }
  return out;
}

TEST(PopeMetrics, MatchesBruteForceRecount) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto preds = random_predictions(rng, 1 + static_cast<int>(rng.below(40)));
    int tp = 0, fp = 0, fn = 0, tn = 0;
    for (const auto& p : preds) {
      const bool present = p.truth == PopeLabel::Present;
      tp += present && p.answer == Answer::Yes;
      fp += !present && p.answer == Answer::Yes;
      fn += present && p.answer == Answer::No;
      tn += !present && p.answer == Answer::No;
    }
    const auto r = pope_metrics(preds);
    EXPECT_EQ(r.tp, tp);
    EXPECT_EQ(r.fp, fp);
    EXPECT_EQ(r.fn, fn);
    EXPECT_EQ(r.tn, tn);
    EXPECT_EQ(r.accuracy, static_cast<double>(tp + tn) / static_cast<double>(preds.size()));
    EXPECT_EQ(r.tp + r.fp + r.fn + r.tn + r.other(), r.total);
  }
}

TEST(PopeMetrics, PermutationInvariant) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    auto preds = random_predictions(rng, 25);
    const auto before = pope_metrics(preds);
    rng.shuffle(preds);
    EXPECT_EQ(pope_metrics(preds), before);
  }
}

TEST(Answers, TokensAndText) {
  EXPECT_EQ(parse_answer(scene::tok::kYes), Answer::Yes);
  EXPECT_EQ(parse_answer(scene::tok::kNo), Answer::No);
  EXPECT_EQ(parse_answer(scene::tok::kPeriod), Answer::Other);
  for (Answer a : {Answer::Yes, Answer::No, Answer::Other}) {
    EXPECT_EQ(parse_answer_text(to_string(a)), a);
  }
  EXPECT_THROW(parse_answer_text("maybe"), FormatError);
}

class CaptionTest : public ::testing::Test {
 protected:
  scene::ObjectVocab vocab = scene::ObjectVocab::make_default(8, 3);

  int name(int o) const { return vocab.objects[static_cast<std::size_t>(o)].name_token; }
  int syn(int o) const { return vocab.objects[static_cast<std::size_t>(o)].synonym_tokens.at(0); }
};

TEST_F(CaptionTest, EmptyCaption) {
  const auto p = parse_caption_objects({}, vocab);
  EXPECT_TRUE(p.objects.empty());
  EXPECT_EQ(p.sentence_count, 0);
  EXPECT_EQ(parse_caption_objects({scene::tok::kEnd, name(1)}, vocab).sentence_count, 0);
}

TEST_F(CaptionTest, SynonymResolves) {
  const auto p = parse_caption_objects({name(2), syn(5), scene::tok::kPeriod}, vocab);
  EXPECT_EQ(p.objects, (std::vector<int>{2, 5}));
  EXPECT_EQ(p.sentence_count, 1);
}

TEST_F(CaptionTest, RepeatsCollapse) {
  const auto p = parse_caption_objects({name(4), syn(4), scene::tok::kPeriod, name(4)}, vocab);
  EXPECT_EQ(p.objects, (std::vector<int>{4}));
  EXPECT_EQ(p.mentions, 3);
  EXPECT_EQ(p.sentence_count, 2);
}

TEST_F(CaptionTest, ChairInstanceQuarter) {
  const CaptionRecord c{{name(0), name(1), scene::tok::kPeriod, name(2), syn(3), scene::tok::kPeriod}, {0, 1, 2}};
  const auto r = chair_metrics({c}, vocab);
  EXPECT_EQ(r.mentioned_objects, 4);
  EXPECT_EQ(r.hallucinated_objects, 1);
  EXPECT_EQ(r.chair_i, 0.25);
  EXPECT_EQ(r.sentences, 2);
  EXPECT_EQ(r.hallucinated_sentences, 1);
  EXPECT_EQ(r.chair_s, 0.5);
  EXPECT_EQ(r.chair_s_caption, 1.0);
}

TEST_F(CaptionTest, AllValidIsZero) {
  const CaptionRecord c{{name(0), scene::tok::kPeriod, syn(1), scene::tok::kEnd}, {0, 1}};
  const auto r = chair_metrics({c, c}, vocab);
  EXPECT_EQ(r.chair_i, 0.0);
  EXPECT_EQ(r.chair_s, 0.0);
  EXPECT_FALSE(r.chair_i_undefined);
}

TEST_F(CaptionTest, NoMentionsFlagged) {
  const auto r = chair_metrics({{{scene::tok::kPeriod}, {0}}}, vocab);
  EXPECT_TRUE(r.chair_i_undefined);
  EXPECT_EQ(r.chair_i, 0.0);
  EXPECT_EQ(r.sentences, 0);
  EXPECT_TRUE(r.chair_s_undefined);
}

TEST_F(CaptionTest, RawMentionsCountedSeparately) {
  const CaptionRecord c{{name(7), syn(7), name(0), scene::tok::kPeriod}, {0}};
  const auto r = chair_metrics({c}, vocab);
  EXPECT_EQ(r.hallucinated_objects, 1);
  EXPECT_EQ(r.hallucinated_mentions, 2);
  EXPECT_EQ(r.raw_mentions, 3);
}

TEST(Serialization, CsvAndJson) {
  const auto r = pope_metrics(fixture(2, 1, 1, 2));
  EXPECT_EQ(pope_csv_row("vpfc", "random", r),
            "vpfc,random,6,2,1,1,2,0,0.6666666666666666,0.6666666666666666,0.6666666666666666,0.6666666666666666,1,1\n");
  const std::string header = pope_csv_header();
  const auto header_cols = std::count(header.begin(), header.end(), ',');
  const auto row = pope_csv_row("x", "y", r);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), header_cols);
  const auto j = nlohmann::json::parse(to_json(r));
  EXPECT_EQ(j["omission"], 1);
  EXPECT_EQ(j["fabrication"], 1);
  EXPECT_EQ(nlohmann::json::parse(to_json(ChairReport{}))["chair_i"], 0.0);
}

}  // namespace
}  // namespace vpfc::eval
