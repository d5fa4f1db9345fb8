#pragma once

#include "vpfc/tensor.hpp"

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace vpfc::model {

struct ModelConfig {
  int num_layers = 4;
  int num_heads = 8;
  int model_dim = 32;
  int grid_side = 8;
  int vocab_size = 39;
  int max_seq_len = 96;
  int ffn_dim = 64;
  std::uint64_t seed = 0;

  int head_dim() const { return model_dim / num_heads; }
  int visual_tokens() const { return grid_side * grid_side; }
  int total_heads() const { return num_layers * num_heads; }

  /// Throws ConfigError on non-positive sizes or model_dim % num_heads != 0.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// A (layer, head) coordinate. Ordering is lexicographic, which is the
/// tie-break order used by every head ranking in the library.
struct HeadId {
  int layer = 0;
  int head = 0;

  auto operator<=>(const HeadId&) const = default;
};

/// G x G grid of visual embeddings, row-major (flat index = row * G + col).
struct VisualInput {
  int grid_side = 0;
  Mat embeddings;  // (G*G) x d

  int cells() const { return grid_side * grid_side; }
};

struct PromptInput {
  VisualInput visual;
  std::vector<int> text;
  /// Index into `text` of the queried object word, if the prompt has one.
  std::optional<int> query_object_pos;
  /// Per-visual-token keep flags; empty means every token is visible.
  /// Dropped tokens receive no attention from any other position.
  std::vector<char> visual_keep;
};

/// Where each kind of token sits in the flattened sequence.
struct TokenLayout {
  int visual_begin = 0;
  int visual_count = 0;
  int prompt_begin = 0;
  int prompt_count = 0;
  int generated_begin = 0;
  int generated_count = 0;

  int length() const { return generated_begin + generated_count; }
  /// Position whose next-token distribution yields the first answer token.
  int answer_position() const { return prompt_begin + prompt_count - 1; }
  bool is_visual(int pos) const { return pos >= visual_begin && pos < visual_begin + visual_count; }
};

}  // namespace vpfc::model
