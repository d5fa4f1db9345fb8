#pragma once

#include "vpfc/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace vpfc::scene {

/// Fixed special tokens; object name and synonym tokens follow them.
namespace tok {
inline constexpr int kQuery = 0;         // "is there"
inline constexpr int kQuestionMark = 1;  // "?"
inline constexpr int kYes = 2;
inline constexpr int kNo = 3;
inline constexpr int kDescribe = 4;  // caption prompt
inline constexpr int kPeriod = 5;    // sentence delimiter
inline constexpr int kEnd = 6;       // end of caption
inline constexpr int kFirstObject = 7;
}  // namespace tok

struct ObjectCategory {
  std::string name;
  int name_token = 0;
  std::vector<int> synonym_tokens;
  std::vector<std::string> synonym_names;
  /// Cells per instance (1..4). Single-cell objects are the "small" ones.
  int instance_size = 1;
  RowVec prototype;

  bool small() const { return instance_size == 1; }
};

struct ObjectVocab {
  std::vector<ObjectCategory> objects;
  RowVec background;
  int dim = 0;

  int size() const { return static_cast<int>(objects.size()); }
  int vocab_size() const;
  /// Object referenced by a name or synonym token.
  std::optional<int> object_for_token(int token) const;
  std::string token_text(int token) const;

  /// Prototypes pairwise distinct, synonym sets disjoint, tokens consistent.
  void validate() const;

  /// The 16-category toy vocabulary with seeded prototypes. `num_objects`
  /// may be smaller than 16 to build reduced vocabularies for tests.
  static ObjectVocab make_default(int dim, std::uint64_t seed, int num_objects = 16);
};

}  // namespace vpfc::scene
