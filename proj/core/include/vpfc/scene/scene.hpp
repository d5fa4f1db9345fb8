#pragma once

#include "vpfc/model/config.hpp"
#include "vpfc/scene/vocab.hpp"
#include "vpfc/tensor.hpp"

#include <cstdint>
#include <vector>

namespace vpfc::scene {

struct CellOccupant {
  int object = -1;  // -1 = empty
  int instance_size = 0;

  bool empty() const { return object < 0; }
  bool operator==(const CellOccupant&) const = default;
};

struct Scene {
  int id = 0;
  int grid_side = 0;
  std::vector<CellOccupant> cells;  // row-major G x G
  std::vector<int> present;         // ascending object ids

  bool contains(int object) const;
  std::vector<int> cells_of(int object) const;
  /// Present set matches the occupancy table and every instance is one
  /// 4-connected block of `instance_size` cells. Throws ConfigError.
  void validate() const;

  bool operator==(const Scene&) const = default;
};

/// Symmetric propensity that object b is co-placed when object a is placed.
struct CooccurrenceSpec {
  Mat propensity;  // K x K in [0,1], zero diagonal
  double bias_knob = 0.0;

  int num_objects() const { return static_cast<int>(propensity.rows()); }
  void validate() const;

  /// Objects (2i, 2i+1) form correlated pairs with propensity kappa.
  static CooccurrenceSpec paired(int num_objects, double kappa);
  static CooccurrenceSpec independent(int num_objects) { return paired(num_objects, 0.0); }
};

struct SceneGenOptions {
  int grid_side = 8;
  int min_objects = 1;
  int max_objects = 4;
  int max_attempts = 200;
};

/// Draws the object count uniformly from [min_objects, max_objects], places
/// uniformly chosen objects, and co-places each partner b of a placed object
/// a with probability propensity(a, b). Co-placed partners may push the count
/// above max_objects.
Scene generate_scene(std::uint64_t seed, const CooccurrenceSpec& spec, const ObjectVocab& vocab,
                     const SceneGenOptions& options);

struct RenderOptions {
  /// Standard deviation of the per-coordinate Gaussian noise.
  double noise = 0.3;
  /// Fraction of each adjacent object's prototype leaking into empty cells
  /// (8-neighbourhood, diagonals at half weight). 0 disables it.
  double halo = 0.0;
  std::uint64_t seed = 0;
};

/// Occupied cells emit their object's prototype, empty cells the background
/// (plus halo), and every cell gets seeded noise.
model::VisualInput render_visual_tokens(const Scene& scene, const ObjectVocab& vocab, const RenderOptions& options);

/// Nearest-prototype label per cell (-1 = background).
std::vector<int> classify_cells(const model::VisualInput& visual, const ObjectVocab& vocab);

}  // namespace vpfc::scene
