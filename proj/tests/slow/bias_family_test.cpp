#include "support/model_cache.hpp"
#include "vpfc/train/trainer.hpp"

#include <gtest/gtest.h>

namespace {

using namespace vpfc;
using vpfc::testing::cached_model;
using vpfc::testing::family_config;
using vpfc::testing::greedy_report;

const scene::Dataset& eval_dataset() {
  static const scene::Dataset d = runner::load_experiment_dataset(family_config(0, 0, 1));
  return d;
}

int adversarial_fabrication(double kappa, std::uint64_t seed) {
  const auto w = cached_model(family_config(kappa, 0.3, seed));
  return greedy_report(w, eval_dataset(), scene::PopeSubset::Adversarial).fabrication();
}

TEST(BiasFamily, UnbiasedModelAnswersRandomQuestions) {
  const auto w = cached_model(family_config(0.0, 0.0, 1));
  const auto r = greedy_report(w, eval_dataset(), scene::PopeSubset::Random);
  EXPECT_GE(r.accuracy, 0.9);
  EXPECT_EQ(r.other(), 0);
}

TEST(BiasFamily, TrainedLossBelowInitialLoss) {
  const auto c = family_config(0.0, 0.0, 1);
  const auto split = train::pope_split(eval_dataset(), scene::PopeSubset::Random);
  const double init = train::evaluate_loss(model::ModelWeights::initialize(c.model), split).mean;
  const double trained = train::evaluate_loss(cached_model(c), split).mean;
  EXPECT_LT(trained, 0.5 * init);
}

TEST(BiasFamily, CooccurrenceBiasRaisesFabrication) {
  EXPECT_GT(adversarial_fabrication(0.9, 1), adversarial_fabrication(0.0, 1));
}

TEST(BiasFamily, MeanFabricationMonotoneInKappa) {
  double prev = -1;
  for (const double kappa : {0.0, 0.5, 0.9}) {
    double sum = 0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      sum += adversarial_fabrication(kappa, seed);
    }
    const double mean = sum / 3;
    RecordProperty("fabrication_k" + std::to_string(static_cast<int>(kappa * 10)), std::to_string(mean));
    EXPECT_GE(mean, prev) << "kappa " << kappa;
    prev = mean;
  }
}

}  // namespace
