#pragma once

#include "vpfc/decode/policies.hpp"
#include "vpfc/model/config.hpp"
#include "vpfc/scene/dataset.hpp"
#include "vpfc/train/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vpfc::runner {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kOutputRootEnv = "VPFC_OUTPUT_ROOT";

struct PolicyEntry {
  std::string label;  // unique within a config; defaults to the policy name
  decode::PolicyParams params;
  bool operator==(const PolicyEntry&) const = default;
};

struct CaptionSpec {
  int scenes = 0;  // 0 disables caption runs
  int max_tokens = 16;
  bool operator==(const CaptionSpec&) const = default;
};

struct SweepSpec {
  scene::PopeSubset subset = scene::PopeSubset::Adversarial;
  std::vector<double> alpha_grid = {0, 1, 2, 3, 4, 5, 6, 8};
  std::vector<double> gamma_grid = {0.125, 0.25, 0.5, 0.75, 1.0};
  bool operator==(const SweepSpec&) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  model::ModelConfig model;
  std::string checkpoint;
  /// Prebuilt dataset file; when empty the dataset is built from `dataset`.
  std::string dataset_path;
  scene::SceneBenchSpec dataset;
  train::TrainSpec train;
  std::vector<PolicyEntry> policies;
  std::vector<scene::PopeSubset> subsets = {scene::PopeSubset::Random, scene::PopeSubset::Popular,
                                            scene::PopeSubset::Adversarial};
  /// Per-subset cap on evaluated questions, 0 for all.
  int max_questions = 0;
  CaptionSpec captions;
  SweepSpec sweep;
  /// Bundle directory, relative to the output root unless absolute.
  std::string output_dir = "runs/experiment";
  std::uint64_t seed = 0;

  /// Policy list with "regular" prepended when missing.
  std::vector<PolicyEntry> effective_policies() const;
  /// Throws ConfigError. `need_checkpoint` also requires the checkpoint file to exist.
  void validate(bool need_checkpoint) const;
  bool operator==(const ExperimentConfig&) const = default;
};

/// Canonical JSON text; field order is fixed so equal configs hash equally.
std::string config_to_json(const ExperimentConfig& config);
/// Missing fields take defaults; unknown fields raise ConfigError.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_hash(const ExperimentConfig& config);

/// $VPFC_OUTPUT_ROOT, or the working directory when unset.
std::filesystem::path output_root();
std::filesystem::path bundle_path(const ExperimentConfig& config);

}  // namespace vpfc::runner
