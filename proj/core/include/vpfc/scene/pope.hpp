#pragma once

#include "vpfc/model/config.hpp"
#include "vpfc/scene/scene.hpp"
#include "vpfc/scene/vocab.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace vpfc::scene {

enum class PopeSubset { Random, Popular, Adversarial };
enum class PopeLabel { Present, Absent };

std::string to_string(PopeSubset subset);
std::string to_string(PopeLabel label);
PopeSubset parse_subset(const std::string& text);
PopeLabel parse_label(const std::string& text);
inline constexpr PopeSubset kAllSubsets[] = {PopeSubset::Random, PopeSubset::Popular, PopeSubset::Adversarial};

struct PopeQuestion {
  int scene_id = 0;
  int object = 0;
  PopeLabel label = PopeLabel::Present;
  PopeSubset subset = PopeSubset::Random;
  std::vector<int> prompt;

  bool operator==(const PopeQuestion&) const = default;
};

using CountMatrix = Eigen::MatrixXi;

/// (i, j) = number of scenes containing both i and j. Zero diagonal.
CountMatrix cooccurrence_matrix(const std::vector<Scene>& scenes, int num_objects);

/// Per-object count of scenes containing it.
std::vector<int> object_frequency(const std::vector<Scene>& scenes, int num_objects);

struct PopeCounts {
  /// Present questions per scene; the same number of absent ones is added.
  int per_scene = 1;
  std::uint64_t seed = 0;
};

/// Balanced present/absent probes for every scene. Absent objects are drawn
/// uniformly (random), by global frequency over `scenes` (popular), or by
/// summed co-occurrence with the scene's present set (adversarial). Ties go
/// to the lowest object id. Throws ConfigError listing the scenes that
/// cannot be balanced.
std::vector<PopeQuestion> build_pope_questions(const std::vector<Scene>& scenes, PopeSubset subset,
                                               const PopeCounts& counts, const CountMatrix& cooccurrence,
                                               const ObjectVocab& vocab);

/// <Q> <object> <?>
std::vector<int> pope_prompt(const ObjectVocab& vocab, int object);
inline constexpr int kPopeObjectIndex = 1;
/// <DESCRIBE>
std::vector<int> caption_prompt();

model::PromptInput make_pope_input(const model::VisualInput& visual, const PopeQuestion& question);
model::PromptInput make_caption_input(const model::VisualInput& visual);

/// Re-derives every label and prompt from the scenes; throws ConfigError on mismatch.
void verify_questions(const std::vector<PopeQuestion>& questions, const std::vector<Scene>& scenes,
                      const ObjectVocab& vocab);

}  // namespace vpfc::scene
