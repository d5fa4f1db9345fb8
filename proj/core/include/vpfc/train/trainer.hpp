#pragma once

#include "vpfc/model/config.hpp"
#include "vpfc/model/engine.hpp"
#include "vpfc/model/weights.hpp"
#include "vpfc/scene/dataset.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vpfc::train {

enum class Optimizer { Sgd, Adam };

struct TrainSpec {
  Optimizer optimizer = Optimizer::Adam;
  int epochs = 20;
  double learning_rate = 0.003;
  /// Scenes per optimizer step.
  int batch_size = 8;
  int scenes_per_epoch = 256;
  /// Pair propensity of the training scenes.
  double bias_knob = 0.0;
  /// Probability that a present single-cell object is left out of the
  /// positive questions and the caption of a training scene.
  double rare_fraction = 0.0;
  double caption_weight = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const TrainSpec&) const = default;
};

/// One visual prefix with several packed text segments and their targets.
struct PackedExample {
  model::VisualInput visual;
  std::vector<int> tokens;
  std::vector<int> positions;
  std::vector<int> segments;
  std::vector<int> target_rows;  // sequence rows whose next token is supervised
  std::vector<int> targets;
  std::vector<double> target_weights;

  model::SequenceSpec sequence() const;
};

/// Present objects (minus rare drops) as "yes" probes, as many uniformly
/// drawn absent objects as "no" probes, and a templated caption.
PackedExample make_training_example(const scene::Scene& scene, const scene::ObjectVocab& vocab,
                                    const model::VisualInput& visual, double rare_fraction, double caption_weight,
                                    std::uint64_t seed);

/// Caption tokens after <DESCRIBE>: objects two per sentence, "." after each
/// sentence, then <END>.
std::vector<int> caption_tokens(const std::vector<int>& objects, const scene::ObjectVocab& vocab);

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
};

struct TrainingLog {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<EpochLog> epochs;

  /// "epoch,loss" with epoch 0 holding the initial probe loss.
  std::string to_csv() const;
};

struct TrainResult {
  model::ModelWeights weights;
  TrainingLog log;
};

/// Adam or plain SGD with a fixed step. Scenes are regenerated from the dataset's
/// generator settings with TrainSpec::bias_knob; noise is fresh every epoch.
/// Throws NumericError naming the epoch when the loss turns non-finite.
TrainResult train(const model::ModelConfig& config, const scene::Dataset& dataset, const TrainSpec& spec);

/// Mean weighted loss and gradient of one batch; grads must be zeros-shaped.
double accumulate_batch(const model::ModelWeights& weights, const std::vector<PackedExample>& batch,
                        model::ModelWeights* grads);

struct LabeledExample {
  model::PromptInput input;
  /// Teacher-forced continuation; each token is one loss term.
  std::vector<int> targets;
};

struct LossSummary {
  double mean = 0.0;
  double total = 0.0;
  int count = 0;
};

/// Mean NLL over every target token of the split. Throws ConfigError on an empty split.
LossSummary evaluate_loss(const model::ModelWeights& weights, const std::vector<LabeledExample>& split);

/// POPE questions of one subset with their yes/no answers as targets.
std::vector<LabeledExample> pope_split(const scene::Dataset& dataset, scene::PopeSubset subset);

}  // namespace vpfc::train
