#include "vpfc/model/weights.hpp"

#include "vpfc/errors.hpp"
#include "vpfc/rng.hpp"

#include <cmath>

namespace vpfc::model {

namespace {

Mat normal_matrix(Rng& rng, int rows, int cols, double stddev) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = stddev * rng.normal();
  }
  return m;
}

void check_shape(const std::string& name, const Mat& m, int rows, int cols) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ConfigError("tensor " + name + " has shape " + std::to_string(m.rows()) + "x" +
                      std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (num_layers <= 0 || num_heads <= 0 || model_dim <= 0 || grid_side <= 0 || vocab_size <= 0 ||
      max_seq_len <= 0 || ffn_dim <= 0) {
    throw ConfigError("model config: all sizes must be positive");
  }
  if (model_dim % num_heads != 0) {
    throw ConfigError("model config: model_dim " + std::to_string(model_dim) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  }
  if (visual_tokens() >= max_seq_len) {
    throw ConfigError("model config: max_seq_len leaves no room for text after the visual grid");
  }
}

ModelWeights ModelWeights::zeros(const ModelConfig& config) {
  config.validate();
  const int d = config.model_dim;
  ModelWeights w;
  w.config = config;
  w.token_embedding = Mat::Zero(config.vocab_size, d);
  w.position_embedding = Mat::Zero(config.max_seq_len, d);
  w.visual_projection = Mat::Zero(d, d);
  w.layers.resize(static_cast<std::size_t>(config.num_layers));
  for (auto& layer : w.layers) {
    layer.norm1 = Mat::Zero(1, d);
    layer.wq = Mat::Zero(d, d);
    layer.wk = Mat::Zero(d, d);
    layer.wv = Mat::Zero(d, d);
    layer.wo = Mat::Zero(d, d);
    layer.norm2 = Mat::Zero(1, d);
    layer.w1 = Mat::Zero(d, config.ffn_dim);
    layer.b1 = Mat::Zero(1, config.ffn_dim);
    layer.w2 = Mat::Zero(config.ffn_dim, d);
    layer.b2 = Mat::Zero(1, d);
  }
  w.final_norm = Mat::Zero(1, d);
  w.unembedding = Mat::Zero(d, config.vocab_size);
  return w;
}

ModelWeights ModelWeights::initialize(const ModelConfig& config) {
  config.validate();
  const int d = config.model_dim;
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(d));
  const double depth_scale = 1.0 / std::sqrt(2.0 * config.num_layers);
  Rng rng(config.seed);

  ModelWeights w = zeros(config);
  w.token_embedding = normal_matrix(rng, config.vocab_size, d, 1.0);
  w.position_embedding = normal_matrix(rng, config.max_seq_len, d, 0.3);
  w.visual_projection = normal_matrix(rng, d, d, in_scale);
  for (auto& layer : w.layers) {
    layer.norm1.setOnes();
    layer.wq = normal_matrix(rng, d, d, in_scale);
    layer.wk = normal_matrix(rng, d, d, in_scale);
    layer.wv = normal_matrix(rng, d, d, in_scale);
    layer.wo = normal_matrix(rng, d, d, in_scale * depth_scale);
    layer.norm2.setOnes();
    layer.w1 = normal_matrix(rng, d, config.ffn_dim, in_scale);
    layer.w2 = normal_matrix(rng, config.ffn_dim, d,
                             depth_scale / std::sqrt(static_cast<double>(config.ffn_dim)));
  }
  w.final_norm.setOnes();
  w.unembedding = normal_matrix(rng, d, config.vocab_size, in_scale);
  return w;
}

void ModelWeights::validate() const {
  config.validate();
  const int d = config.model_dim;
  check_shape("token_embedding", token_embedding, config.vocab_size, d);
  check_shape("position_embedding", position_embedding, config.max_seq_len, d);
  check_shape("visual_projection", visual_projection, d, d);
  if (static_cast<int>(layers.size()) != config.num_layers) {
    throw ConfigError("weights hold " + std::to_string(layers.size()) + " layers, config says " +
                      std::to_string(config.num_layers));
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    check_shape(p + "norm1", layer.norm1, 1, d);
    check_shape(p + "wq", layer.wq, d, d);
    check_shape(p + "wk", layer.wk, d, d);
    check_shape(p + "wv", layer.wv, d, d);
    check_shape(p + "wo", layer.wo, d, d);
    check_shape(p + "norm2", layer.norm2, 1, d);
    check_shape(p + "w1", layer.w1, d, config.ffn_dim);
    check_shape(p + "b1", layer.b1, 1, config.ffn_dim);
    check_shape(p + "w2", layer.w2, config.ffn_dim, d);
    check_shape(p + "b2", layer.b2, 1, d);
  }
  check_shape("final_norm", final_norm, 1, d);
  check_shape("unembedding", unembedding, d, config.vocab_size);
  for_each_tensor([](const std::string& name, const Mat& m) {
    if (!m.allFinite()) {
      throw NumericError("tensor " + name + " has non-finite entries");
    }
  });
}

void ModelWeights::add_scaled(const ModelWeights& other, double scale) {
  std::vector<const Mat*> src;
  other.for_each_tensor([&](const std::string&, const Mat& m) { src.push_back(&m); });
  std::size_t i = 0;
  for_each_tensor([&](const std::string& name, Mat& m) {
    if (i >= src.size() || src[i]->rows() != m.rows() || src[i]->cols() != m.cols()) {
      throw ConfigError("add_scaled: shape mismatch at " + name);
    }
    m.noalias() += scale * *src[i];
    ++i;
  });
}

std::size_t ModelWeights::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](const std::string&, const Mat& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

bool operator==(const ModelWeights& a, const ModelWeights& b) {
  if (!(a.config == b.config) || a.version != b.version || a.layers.size() != b.layers.size()) {
    return false;
  }
  std::vector<const Mat*> lhs;
  a.for_each_tensor([&](const std::string&, const Mat& m) { lhs.push_back(&m); });
  bool equal = true;
  std::size_t i = 0;
  b.for_each_tensor([&](const std::string&, const Mat& m) {
    const Mat& o = *lhs[i++];
    if (o.rows() != m.rows() || o.cols() != m.cols() || !(o.array() == m.array()).all()) {
      equal = false;
    }
  });
  return equal;
}

}  // namespace vpfc::model
