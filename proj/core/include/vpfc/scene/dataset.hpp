#pragma once

#include "vpfc/model/config.hpp"
#include "vpfc/scene/pope.hpp"
#include "vpfc/scene/scene.hpp"
#include "vpfc/scene/vocab.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vpfc::scene {

inline constexpr int kDatasetSchemaVersion = 1;

struct SceneBenchSpec {
  int num_objects = 16;
  int dim = 32;
  int grid_side = 8;
  int min_objects = 1;
  int max_objects = 4;
  /// Pair propensity of the evaluation scenes; adversarial probes use their co-occurrence counts.
  double eval_kappa = 0.5;
  int num_scenes = 300;
  int questions_per_scene = 1;
  double noise = 0.8;
  double halo = 0.0;
  std::uint64_t vocab_seed = 7;
  std::uint64_t scene_seed = 1001;
  std::uint64_t render_seed = 2002;
  std::uint64_t question_seed = 3003;

  void validate() const;
  SceneGenOptions gen_options() const;
  bool operator==(const SceneBenchSpec&) const = default;
};

struct Dataset {
  int schema_version = kDatasetSchemaVersion;
  SceneBenchSpec spec;
  ObjectVocab vocab;
  std::vector<Scene> scenes;
  CountMatrix cooccurrence;
  std::vector<PopeQuestion> questions;  // all subsets, subset-major

  const Scene& scene(int id) const;
  std::vector<PopeQuestion> subset(PopeSubset s) const;
  /// Deterministic rendering of an evaluation scene.
  model::VisualInput render(const Scene& s) const;
  RenderOptions render_options(std::uint64_t seed) const;
};

Dataset build_dataset(const SceneBenchSpec& spec);

/// JSON container. Field names are stable; see README for the schema.
std::string dataset_to_json(const Dataset& dataset);
Dataset dataset_from_json(const std::string& text);
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace vpfc::scene
