#include "vpfc/scene/scene.hpp"

#include "vpfc/errors.hpp"
#include "vpfc/rng.hpp"

#include <algorithm>
#include <deque>
#include <set>

namespace vpfc::scene {

namespace {

std::vector<int> orthogonal_neighbors(int cell, int g) {
  const int r = cell / g;
  const int c = cell % g;
  std::vector<int> out;
  if (r > 0) out.push_back(cell - g);
  if (r + 1 < g) out.push_back(cell + g);
  if (c > 0) out.push_back(cell - 1);
  if (c + 1 < g) out.push_back(cell + 1);
  return out;
}

// Grows a random 4-connected block of `size` empty cells. Empty result on failure.
std::vector<int> grow_instance(Rng& rng, const std::vector<CellOccupant>& cells, int g, int size) {
  std::vector<int> empty;
  for (int i = 0; i < g * g; ++i) {
    if (cells[static_cast<std::size_t>(i)].empty()) {
      empty.push_back(i);
    }
  }
  if (static_cast<int>(empty.size()) < size) {
    return {};
  }
  std::vector<int> block = {empty[rng.below(empty.size())]};
  while (static_cast<int>(block.size()) < size) {
    std::vector<int> frontier;
    for (int cell : block) {
      for (int n : orthogonal_neighbors(cell, g)) {
        if (cells[static_cast<std::size_t>(n)].empty() && std::find(block.begin(), block.end(), n) == block.end() &&
            std::find(frontier.begin(), frontier.end(), n) == frontier.end()) {
          frontier.push_back(n);
        }
      }
    }
    if (frontier.empty()) {
      return {};
    }
    std::sort(frontier.begin(), frontier.end());
    block.push_back(frontier[rng.below(frontier.size())]);
  }
  std::sort(block.begin(), block.end());
  return block;
}

}  // namespace

bool Scene::contains(int object) const { return std::binary_search(present.begin(), present.end(), object); }

std::vector<int> Scene::cells_of(int object) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(cells.size()); ++i) {
    if (cells[static_cast<std::size_t>(i)].object == object) {
      out.push_back(i);
    }
  }
  return out;
}

void Scene::validate() const {
  const int g = grid_side;
  if (g <= 0 || static_cast<int>(cells.size()) != g * g) {
    throw ConfigError("scene " + std::to_string(id) + ": occupancy table does not match grid side");
  }
  std::set<int> occupied;
  for (const auto& cell : cells) {
    if (!cell.empty()) {
      occupied.insert(cell.object);
    }
  }
  if (!std::is_sorted(present.begin(), present.end()) ||
      std::vector<int>(occupied.begin(), occupied.end()) != present) {
    throw ConfigError("scene " + std::to_string(id) + ": present set disagrees with occupancy");
  }
  for (int object : present) {
    const std::vector<int> block = cells_of(object);
    for (int cell : block) {
      if (cells[static_cast<std::size_t>(cell)].instance_size != static_cast<int>(block.size())) {
        throw ConfigError("scene " + std::to_string(id) + ": instance size mismatch for object " +
                          std::to_string(object));
      }
    }
    std::set<int> reached = {block.front()};
    std::deque<int> queue = {block.front()};
    while (!queue.empty()) {
      const int cell = queue.front();
      queue.pop_front();
      for (int n : orthogonal_neighbors(cell, g)) {
        if (cells[static_cast<std::size_t>(n)].object == object && reached.insert(n).second) {
          queue.push_back(n);
        }
      }
    }
    if (reached.size() != block.size()) {
      throw ConfigError("scene " + std::to_string(id) + ": object " + std::to_string(object) +
                        " is not 4-connected");
    }
  }
}

void CooccurrenceSpec::validate() const {
  if (propensity.rows() != propensity.cols()) {
    throw ConfigError("co-occurrence matrix must be square");
  }
  for (Eigen::Index i = 0; i < propensity.rows(); ++i) {
    if (propensity(i, i) != 0.0) {
      throw ConfigError("co-occurrence matrix must have a zero diagonal");
    }
    for (Eigen::Index j = 0; j < propensity.cols(); ++j) {
      const double p = propensity(i, j);
      if (!(p >= 0.0 && p <= 1.0)) {
        throw ConfigError("co-occurrence propensities must lie in [0,1]");
      }
      if (p != propensity(j, i)) {
        throw ConfigError("co-occurrence matrix must be symmetric");
      }
    }
  }
}

CooccurrenceSpec CooccurrenceSpec::paired(int num_objects, double kappa) {
  if (!(kappa >= 0.0 && kappa <= 1.0)) {
    throw ConfigError("bias knob must lie in [0,1]");
  }
  CooccurrenceSpec spec;
  spec.bias_knob = kappa;
  spec.propensity = Mat::Zero(num_objects, num_objects);
  for (int a = 0; a + 1 < num_objects; a += 2) {
    spec.propensity(a, a + 1) = kappa;
    spec.propensity(a + 1, a) = kappa;
  }
  return spec;
}

Scene generate_scene(std::uint64_t seed, const CooccurrenceSpec& spec, const ObjectVocab& vocab,
                     const SceneGenOptions& options) {
  spec.validate();
  const int k = vocab.size();
  const int g = options.grid_side;
  if (spec.num_objects() != k) {
    throw ConfigError("co-occurrence spec covers " + std::to_string(spec.num_objects()) +
                      " objects, vocabulary has " + std::to_string(k));
  }
  if (options.min_objects < 0 || options.min_objects > options.max_objects || options.max_objects > k) {
    throw ConfigError("object count range must satisfy 0 <= min <= max <= K");
  }
  Rng rng(seed);
  Scene scene;
  scene.grid_side = g;
  scene.cells.assign(static_cast<std::size_t>(g * g), CellOccupant{});
  const int target = rng.uniform_int(options.min_objects, options.max_objects);

  std::vector<char> placed(static_cast<std::size_t>(k), 0);
  int placed_count = 0;
  auto place = [&](int object) {
    const int size = vocab.objects[static_cast<std::size_t>(object)].instance_size;
    for (int attempt = 0; attempt < options.max_attempts; ++attempt) {
      const std::vector<int> block = grow_instance(rng, scene.cells, g, size);
      if (!block.empty()) {
        for (int cell : block) {
          scene.cells[static_cast<std::size_t>(cell)] = CellOccupant{object, size};
        }
        placed[static_cast<std::size_t>(object)] = 1;
        ++placed_count;
        return;
      }
    }
    throw ConfigError("could not place object " + std::to_string(object) + " after " +
                      std::to_string(options.max_attempts) + " attempts (grid overflow)");
  };

  while (placed_count < target) {
    std::vector<int> candidates;
    for (int o = 0; o < k; ++o) {
      if (placed[static_cast<std::size_t>(o)] == 0) {
        candidates.push_back(o);
      }
    }
    std::deque<int> queue = {candidates[rng.below(candidates.size())]};
    place(queue.front());
    while (!queue.empty()) {
      const int a = queue.front();
      queue.pop_front();
      for (int b = 0; b < k; ++b) {
        const double p = spec.propensity(a, b);
        if (p > 0.0 && placed[static_cast<std::size_t>(b)] == 0 && rng.bernoulli(p)) {
          place(b);
          queue.push_back(b);
        }
      }
    }
  }
  for (int o = 0; o < k; ++o) {
    if (placed[static_cast<std::size_t>(o)] != 0) {
      scene.present.push_back(o);
    }
  }
  return scene;
}

model::VisualInput render_visual_tokens(const Scene& scene, const ObjectVocab& vocab, const RenderOptions& options) {
  scene.validate();
  const int g = scene.grid_side;
  const int d = vocab.dim;
  model::VisualInput out;
  out.grid_side = g;
  out.embeddings.resize(g * g, d);
  for (int cell = 0; cell < g * g; ++cell) {
    const CellOccupant& occ = scene.cells[static_cast<std::size_t>(cell)];
    if (!occ.empty()) {
      out.embeddings.row(cell) = vocab.objects[static_cast<std::size_t>(occ.object)].prototype;
      continue;
    }
    RowVec value = vocab.background;
    if (options.halo > 0.0) {
      RowVec leak = RowVec::Zero(d);
      double weight = 0.0;
      const int r = cell / g;
      const int c = cell % g;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr;
          const int cc = c + dc;
          if ((dr == 0 && dc == 0) || rr < 0 || cc < 0 || rr >= g || cc >= g) {
            continue;
          }
          const CellOccupant& n = scene.cells[static_cast<std::size_t>(rr * g + cc)];
          if (n.empty()) {
            continue;
          }
          const double w = (dr != 0 && dc != 0) ? 0.5 : 1.0;
          leak += w * (vocab.objects[static_cast<std::size_t>(n.object)].prototype - vocab.background);
          weight += w;
        }
      }
      if (weight > 0.0) {
        value += options.halo * leak / weight;
      }
    }
    out.embeddings.row(cell) = value;
  }
  if (options.noise > 0.0) {
    Rng rng(options.seed);
    for (Eigen::Index i = 0; i < out.embeddings.size(); ++i) {
      out.embeddings.data()[i] += options.noise * rng.normal();
    }
  }
  return out;
}

std::vector<int> classify_cells(const model::VisualInput& visual, const ObjectVocab& vocab) {
  std::vector<int> labels(static_cast<std::size_t>(visual.cells()), -1);
  for (int cell = 0; cell < visual.cells(); ++cell) {
    double best = (visual.embeddings.row(cell) - vocab.background).squaredNorm();
    for (int o = 0; o < vocab.size(); ++o) {
      const double dist = (visual.embeddings.row(cell) - vocab.objects[static_cast<std::size_t>(o)].prototype).squaredNorm();
      if (dist < best) {
        best = dist;
        labels[static_cast<std::size_t>(cell)] = o;
      }
    }
  }
  return labels;
}

}  // namespace vpfc::scene
