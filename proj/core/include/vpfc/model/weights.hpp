#pragma once

#include "vpfc/model/config.hpp"
#include "vpfc/tensor.hpp"

#include <string>
#include <vector>

namespace vpfc::model {

struct LayerWeights {
  Mat norm1;  // 1 x d
  Mat wq, wk, wv, wo;  // d x d
  Mat norm2;  // 1 x d
  Mat w1;  // d x ffn
  Mat b1;  // 1 x ffn
  Mat w2;  // ffn x d
  Mat b2;  // 1 x d
};

/// All parameters of the decoder. Vectors are stored as 1 x n matrices so
/// that every parameter can be visited uniformly by name.
struct ModelWeights {
  ModelConfig config;
  std::string version = "vpfc-toy-1";

  Mat token_embedding;     // vocab x d
  Mat position_embedding;  // max_seq_len x d
  Mat visual_projection;   // d x d
  std::vector<LayerWeights> layers;
  Mat final_norm;   // 1 x d
  Mat unembedding;  // d x vocab

  static ModelWeights zeros(const ModelConfig& config);
  /// Seeded initialization from config.seed.
  static ModelWeights initialize(const ModelConfig& config);

  /// Dimensions against config and finiteness. Throws ConfigError/NumericError.
  void validate() const;

  template <class F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

  /// this += scale * other, tensor by tensor. Shapes must match.
  void add_scaled(const ModelWeights& other, double scale);

  std::size_t parameter_count() const;

 private:
  template <class Self, class F>
  static void visit(Self& self, F& f) {
    f("token_embedding", self.token_embedding);
    f("position_embedding", self.position_embedding);
    f("visual_projection", self.visual_projection);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& layer = self.layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      f(p + "norm1", layer.norm1);
      f(p + "wq", layer.wq);
      f(p + "wk", layer.wk);
      f(p + "wv", layer.wv);
      f(p + "wo", layer.wo);
      f(p + "norm2", layer.norm2);
      f(p + "w1", layer.w1);
      f(p + "b1", layer.b1);
      f(p + "w2", layer.w2);
      f(p + "b2", layer.b2);
    }
    f("final_norm", self.final_norm);
    f("unembedding", self.unembedding);
  }
};

bool operator==(const ModelWeights& a, const ModelWeights& b);

}  // namespace vpfc::model
