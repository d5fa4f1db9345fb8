#pragma once

#include "vpfc/eval/metrics.hpp"
#include "vpfc/model/weights.hpp"
#include "vpfc/runner/config.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace vpfc::runner {

inline constexpr int kBundleSchemaVersion = 1;

enum class Failure { None, Numeric, Other };

/// One evaluated question, as shipped in predictions.csv.
struct QuestionRecord {
  std::string policy;
  scene::PopeSubset subset = scene::PopeSubset::Random;
  int question_id = 0;  // index into Dataset::questions
  int scene_id = 0;
  int object = 0;
  scene::PopeLabel truth = scene::PopeLabel::Present;
  int token = 0;
  eval::Answer answer = eval::Answer::Other;
  double p_yes = 0.0;
};

struct CellReport {
  std::string policy;
  scene::PopeSubset subset = scene::PopeSubset::Random;
  eval::HallucinationReport report;
};

/// Omission/fabrication change of one cell against the regular policy on the same subset.
struct DeltaRow {
  std::string policy;
  scene::PopeSubset subset = scene::PopeSubset::Random;
  int omission = 0;
  int fabrication = 0;
  int omission_delta = 0;
  int fabrication_delta = 0;
  double accuracy_delta = 0.0;
};

struct CaptionReport {
  std::string policy;
  eval::ChairReport report;
  std::vector<std::vector<int>> tokens;  // one caption per scene, dataset order
};

struct ExperimentResult {
  std::filesystem::path bundle;
  bool complete = false;
  Failure failure = Failure::None;
  std::string failed_stage;
  std::string error;
  std::vector<QuestionRecord> predictions;
  std::vector<CellReport> cells;
  std::vector<DeltaRow> deltas;
  std::vector<CaptionReport> captions;

  const CellReport* cell(const std::string& policy, scene::PopeSubset subset) const;
};

/// Loads the dataset named by the config (file or inline spec).
scene::Dataset load_experiment_dataset(const ExperimentConfig& config);

struct TrainingOutcome {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_csv;  // "<checkpoint>.loss.csv"
  train::TrainingLog log;
};

/// Trains config.model on the config's dataset with config.train and saves
/// the checkpoint (atomically) at config.checkpoint.
TrainingOutcome run_training(const ExperimentConfig& config);

/// Evaluates every (policy x subset) cell and writes the bundle into `bundle_dir`:
/// config.json, predictions.csv, pope.csv, reports.json, delta.csv,
/// chair.csv + captions.csv (caption runs only), then manifest.json last.
/// Failures after validation keep the finished cells and mark the manifest incomplete.
ExperimentResult run_experiment(const ExperimentConfig& config, const model::ModelWeights& weights,
                                const scene::Dataset& dataset, const std::filesystem::path& bundle_dir);
/// Loads checkpoint and dataset, writes into bundle_path(config).
ExperimentResult run_experiment(const ExperimentConfig& config);

enum class SweepParam { Alpha, Gamma };
std::string to_string(SweepParam param);
SweepParam parse_sweep_param(const std::string& text);

struct SweepRow {
  double value = 0.0;
  eval::HallucinationReport report;
};

struct SweepResult {
  SweepParam param = SweepParam::Alpha;
  scene::PopeSubset subset = scene::PopeSubset::Adversarial;
  std::vector<SweepRow> rows;
  /// Selected heads per grid point, one list per evaluated question (question order).
  std::vector<std::vector<std::vector<model::HeadId>>> heads;
  std::vector<int> question_ids;
  std::vector<std::string> warnings;
  std::filesystem::path bundle;
};

/// Sorted, duplicates dropped; each dropped value adds a warning.
std::vector<double> dedupe_grid(const std::vector<double>& grid, std::vector<std::string>* warnings);

/// VPFC accuracy per grid point on config.sweep.subset. Base parameters come from
/// the first vpfc policy in the config (defaults otherwise). Writes
/// sweep_<param>.csv, sweep_<param>_heads.csv and sweep_<param>_manifest.json.
SweepResult run_sweep(const ExperimentConfig& config, const model::ModelWeights& weights,
                      const scene::Dataset& dataset, SweepParam param, const std::filesystem::path& bundle_dir);
SweepResult run_sweep(const ExperimentConfig& config, SweepParam param);

/// Per-cell reports rebuilt from a bundle's predictions.csv.
std::vector<CellReport> recount_bundle(const std::filesystem::path& bundle_dir);
/// Human-readable table of a bundle's pope.csv and delta.csv.
std::string format_bundle_summary(const std::filesystem::path& bundle_dir);

std::string format_heads(const std::vector<model::HeadId>& heads);
std::vector<model::HeadId> parse_heads(const std::string& text);

}  // namespace vpfc::runner
