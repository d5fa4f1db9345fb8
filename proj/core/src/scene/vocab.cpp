#include "vpfc/scene/vocab.hpp"

#include "vpfc/errors.hpp"
#include "vpfc/rng.hpp"

#include <array>
#include <set>

namespace vpfc::scene {

namespace {

struct CategorySeed {
  const char* name;
  const char* synonym;
  int size;
};

// Consecutive entries form the co-occurring pairs used by CooccurrenceSpec::paired.
constexpr std::array<CategorySeed, 16> kCategories = {{
    {"toilet", "commode", 3},
    {"sink", "basin", 2},
    {"spoon", "teaspoon", 1},
    {"bowl", "dish", 2},
    {"fork", "prong", 1},
    {"knife", "blade", 2},
    {"dog", "puppy", 4},
    {"frisbee", "disc", 2},
    {"laptop", "notebook", 3},
    {"mouse", "trackball", 1},
    {"keyboard", "keypad", 2},
    {"tv", "television", 4},
    {"car", "automobile", 4},
    {"traffic light", "signal", 2},
    {"bird", "sparrow", 1},
    {"kite", "glider", 3},
}};

RowVec random_vector(Rng& rng, int dim) {
  RowVec v(dim);
  for (int i = 0; i < dim; ++i) {
    v[i] = rng.normal();
  }
  return v;
}

}  // namespace

int ObjectVocab::vocab_size() const {
  int highest = tok::kFirstObject - 1;
  for (const auto& o : objects) {
    highest = std::max(highest, o.name_token);
    for (int s : o.synonym_tokens) {
      highest = std::max(highest, s);
    }
  }
  return highest + 1;
}

std::optional<int> ObjectVocab::object_for_token(int token) const {
  for (int i = 0; i < size(); ++i) {
    const auto& o = objects[static_cast<std::size_t>(i)];
    if (o.name_token == token) {
      return i;
    }
    for (int s : o.synonym_tokens) {
      if (s == token) {
        return i;
      }
    }
  }
  return std::nullopt;
}

std::string ObjectVocab::token_text(int token) const {
  switch (token) {
    case tok::kQuery: return "<Q>";
    case tok::kQuestionMark: return "?";
    case tok::kYes: return "yes";
    case tok::kNo: return "no";
    case tok::kDescribe: return "<DESCRIBE>";
    case tok::kPeriod: return ".";
    case tok::kEnd: return "<END>";
    default: break;
  }
  for (const auto& o : objects) {
    if (o.name_token == token) {
      return o.name;
    }
    for (std::size_t k = 0; k < o.synonym_tokens.size(); ++k) {
      if (o.synonym_tokens[k] == token) {
        return k < o.synonym_names.size() ? o.synonym_names[k] : o.name + "~" + std::to_string(k);
      }
    }
  }
  return "<unk:" + std::to_string(token) + ">";
}

void ObjectVocab::validate() const {
  if (objects.empty()) {
    throw ConfigError("object vocabulary is empty");
  }
  if (background.size() != dim) {
    throw ConfigError("background prototype has the wrong dimension");
  }
  std::set<int> seen;
  for (const auto& o : objects) {
    if (o.prototype.size() != dim) {
      throw ConfigError("prototype of " + o.name + " has the wrong dimension");
    }
    if (o.instance_size < 1 || o.instance_size > 4) {
      throw ConfigError("instance size of " + o.name + " must be in 1..4");
    }
    if (o.name_token < tok::kFirstObject || !seen.insert(o.name_token).second) {
      throw ConfigError("name token of " + o.name + " collides with another token");
    }
    for (int s : o.synonym_tokens) {
      if (s < tok::kFirstObject || !seen.insert(s).second) {
        throw ConfigError("synonym sets are not disjoint (" + o.name + ")");
      }
    }
  }
  for (std::size_t i = 0; i < objects.size(); ++i) {
    if ((objects[i].prototype - background).norm() <= 0.0) {
      throw ConfigError("prototype of " + objects[i].name + " equals the background");
    }
    for (std::size_t j = i + 1; j < objects.size(); ++j) {
      if ((objects[i].prototype - objects[j].prototype).norm() <= 0.0) {
        throw ConfigError("prototypes of " + objects[i].name + " and " + objects[j].name + " coincide");
      }
    }
  }
}

ObjectVocab ObjectVocab::make_default(int dim, std::uint64_t seed, int num_objects) {
  if (num_objects < 1 || num_objects > static_cast<int>(kCategories.size())) {
    throw ConfigError("default vocabulary supports 1..16 objects");
  }
  if (dim < 1) {
    throw ConfigError("prototype dimension must be positive");
  }
  Rng rng(seed);
  ObjectVocab vocab;
  vocab.dim = dim;
  vocab.background = random_vector(rng, dim);
  for (int i = 0; i < num_objects; ++i) {
    const auto& seed_row = kCategories[static_cast<std::size_t>(i)];
    ObjectCategory o;
    o.name = seed_row.name;
    o.name_token = tok::kFirstObject + i;
    o.synonym_tokens = {tok::kFirstObject + num_objects + i};
    o.synonym_names = {seed_row.synonym};
    o.instance_size = seed_row.size;
    o.prototype = random_vector(rng, dim);
    vocab.objects.push_back(std::move(o));
  }
  vocab.validate();
  return vocab;
}

}  // namespace vpfc::scene
