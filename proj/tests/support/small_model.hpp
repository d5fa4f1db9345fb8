#pragma once

#include "vpfc/model/transformer.hpp"
#include "vpfc/rng.hpp"

namespace vpfc::testing {

inline model::ModelConfig small_config(std::uint64_t seed = 7) {
  model::ModelConfig c;
  c.num_layers = 2;
  c.num_heads = 2;
  c.model_dim = 16;
  c.grid_side = 4;
  c.vocab_size = 12;
  c.max_seq_len = 32;
  c.ffn_dim = 32;
  c.seed = seed;
  return c;
}

inline model::PromptInput random_prompt(const model::ModelConfig& c, std::uint64_t seed, int text_len = 5) {
  Rng rng(seed);
  model::PromptInput in;
  in.visual.grid_side = c.grid_side;
  in.visual.embeddings.resize(c.visual_tokens(), c.model_dim);
  for (Eigen::Index i = 0; i < in.visual.embeddings.size(); ++i) {
    in.visual.embeddings.data()[i] = rng.normal();
  }
  for (int i = 0; i < text_len; ++i) {
    in.text.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(c.vocab_size))));
  }
  return in;
}

/// Trace shell with hand-set attention maps: G x G visual tokens then `text` rows.
inline model::ForwardTrace synthetic_trace(int layers, int heads, int grid_side, int text) {
  model::ForwardTrace t;
  t.config.num_layers = layers;
  t.config.num_heads = heads;
  t.config.grid_side = grid_side;
  t.config.model_dim = heads;
  t.layout.visual_count = grid_side * grid_side;
  t.layout.prompt_begin = t.layout.visual_count;
  t.layout.prompt_count = text;
  t.layout.generated_begin = t.layout.visual_count + text;
  const int n = t.layout.length();
  t.attention.assign(static_cast<std::size_t>(layers * heads), Mat::Zero(n, n));
  return t;
}

}  // namespace vpfc::testing
