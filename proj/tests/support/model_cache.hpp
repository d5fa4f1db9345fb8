#pragma once

// Trained default-size models shared by the slow tests. Keyed by the config
// hash, so a changed spec or trainer setting retrains instead of reusing.

#include "vpfc/eval/metrics.hpp"
#include "vpfc/model/checkpoint.hpp"
#include "vpfc/model/transformer.hpp"
#include "vpfc/runner/experiment.hpp"
#include "vpfc/scene/pope.hpp"

#include <cstdlib>
#include <filesystem>

#ifndef VPFC_MODEL_CACHE
#define VPFC_MODEL_CACHE "model_cache"
#endif

namespace vpfc::testing {

inline std::filesystem::path model_cache_dir() {
  if (const char* env = std::getenv("VPFC_MODEL_CACHE")) {
    return env;
  }
  return VPFC_MODEL_CACHE;
}

/// Default model, dataset and trainer with the given bias knobs; model and trainer share the seed.
inline runner::ExperimentConfig family_config(double kappa, double rho, std::uint64_t seed) {
  runner::ExperimentConfig c;
  c.name = "family";
  c.model.seed = seed;
  c.train.seed = seed;
  c.train.bias_knob = kappa;
  c.train.rare_fraction = rho;
  return c;
}

inline model::ModelWeights cached_model(runner::ExperimentConfig config) {
  config.checkpoint.clear();
  const auto path = model_cache_dir() / (runner::config_hash(config).substr(0, 16) + ".ckpt");
  if (!std::filesystem::exists(path)) {
    std::filesystem::create_directories(path.parent_path());
    config.checkpoint = path.string();
    runner::run_training(config);
  }
  return model::load_checkpoint(path);
}

/// Greedy answers of the undecorated model on one subset.
inline eval::HallucinationReport greedy_report(const model::ModelWeights& weights, const scene::Dataset& dataset,
                                               scene::PopeSubset subset) {
  std::vector<eval::Prediction> preds;
  const auto questions = dataset.subset(subset);
  for (std::size_t i = 0; i < questions.size(); ++i) {
    const auto& q = questions[i];
    const auto trace = model::forward(weights, scene::make_pope_input(dataset.render(dataset.scene(q.scene_id)), q));
    const int token = model::argmax(trace.distribution(trace.layout.answer_position()));
    preds.push_back({static_cast<int>(i), eval::parse_answer(token), q.label});
  }
  return eval::pope_metrics(preds);
}

}  // namespace vpfc::testing
