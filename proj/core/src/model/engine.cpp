#include "vpfc/model/engine.hpp"

#include "vpfc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vpfc::model {

namespace {

constexpr double kRmsEps = 1e-6;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void rms_norm(const Mat& x, const Mat& gain, Vec& rms, Mat& xhat, Mat& out) {
  const auto d = static_cast<double>(x.cols());
  rms = ((x.array().square().rowwise().sum() / d) + kRmsEps).sqrt().matrix();
  xhat = x.array().colwise() / rms.array();
  out = xhat.array().rowwise() * gain.row(0).array();
}

// Returns dL/dx given dL/dout for out = (x / rms(x)) * gain.
Mat rms_norm_backward(const Mat& dout, const Mat& xhat, const Vec& rms, const Mat& gain, Mat* dgain) {
  if (dgain != nullptr) {
    dgain->row(0) += dout.cwiseProduct(xhat).colwise().sum();
  }
  const Mat dxhat = dout.array().rowwise() * gain.row(0).array();
  const auto d = static_cast<double>(xhat.cols());
  const Vec m = dxhat.cwiseProduct(xhat).rowwise().sum() / d;
  Mat dx = dxhat - (xhat.array().colwise() * m.array()).matrix();
  dx.array().colwise() /= rms.array();
  return dx;
}

void softmax_row(std::span<double> row) {
  double peak = kNegInf;
  for (double v : row) {
    peak = std::max(peak, v);
  }
  if (peak == kNegInf) {
    std::fill(row.begin(), row.end(), 0.0);
    return;
  }
  double total = 0.0;
  for (double& v : row) {
    v = (v == kNegInf) ? 0.0 : std::exp(v - peak);
    total += v;
  }
  for (double& v : row) {
    v /= total;
  }
}

std::vector<char> visibility_matrix(const SequenceSpec& seq) {
  const int t = seq.length();
  std::vector<char> mask(static_cast<std::size_t>(t) * static_cast<std::size_t>(t), 0);
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j <= i; ++j) {
      mask[static_cast<std::size_t>(i) * static_cast<std::size_t>(t) + static_cast<std::size_t>(j)] =
          visible(seq, i, j) ? 1 : 0;
    }
  }
  return mask;
}

void validate_sequence(const ModelWeights& weights, const SequenceSpec& seq) {
  const auto& cfg = weights.config;
  const int v = seq.visual_count();
  if (seq.visual != nullptr) {
    if (seq.visual->grid_side != cfg.grid_side) {
      throw ConfigError("visual grid side " + std::to_string(seq.visual->grid_side) +
                        " does not match model grid side " + std::to_string(cfg.grid_side));
    }
    if (seq.visual->embeddings.rows() != v || seq.visual->embeddings.cols() != cfg.model_dim) {
      throw ConfigError("visual embeddings must be " + std::to_string(v) + "x" +
                        std::to_string(cfg.model_dim));
    }
    if (!seq.visual->embeddings.allFinite()) {
      throw NumericError("visual embeddings contain non-finite values");
    }
    if (!seq.visual_keep.empty() && static_cast<int>(seq.visual_keep.size()) != v) {
      throw ConfigError("visual keep mask must have one flag per visual token");
    }
  }
  if (seq.positions.size() != seq.tokens.size() || seq.segments.size() != seq.tokens.size()) {
    throw ConfigError("sequence tokens, positions and segments must have equal length");
  }
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    if (seq.tokens[i] < 0 || seq.tokens[i] >= cfg.vocab_size) {
      throw ConfigError("token id " + std::to_string(seq.tokens[i]) + " outside vocabulary of size " +
                        std::to_string(cfg.vocab_size));
    }
    if (seq.positions[i] < 0 || seq.positions[i] >= cfg.max_seq_len) {
      throw ConfigError("position " + std::to_string(seq.positions[i]) + " exceeds max_seq_len " +
                        std::to_string(cfg.max_seq_len));
    }
  }
  if (seq.length() == 0) {
    throw ConfigError("empty sequence");
  }
}

}  // namespace

bool visible(const SequenceSpec& seq, int i, int j) {
  if (j > i) {
    return false;
  }
  const int v = seq.visual_count();
  if (j < v) {
    if (j == i || seq.visual_keep.empty()) {
      return true;
    }
    return seq.visual_keep[static_cast<std::size_t>(j)] != 0;
  }
  const int sj = seq.segments[static_cast<std::size_t>(j - v)];
  const int si = seq.segments[static_cast<std::size_t>(i - v)];
  return sj == 0 || sj == si;
}

SequenceSpec make_sequence(const PromptInput& input, const std::vector<int>& generated) {
  SequenceSpec seq;
  seq.visual = &input.visual;
  seq.visual_keep = input.visual_keep;
  seq.tokens = input.text;
  seq.tokens.insert(seq.tokens.end(), generated.begin(), generated.end());
  const int v = input.visual.cells();
  seq.positions.resize(seq.tokens.size());
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    seq.positions[i] = v + static_cast<int>(i);
  }
  seq.segments.assign(seq.tokens.size(), 0);
  return seq;
}

void run_forward(const ModelWeights& weights, const SequenceSpec& seq, const HookSet& hooks,
                 ForwardCache& cache, const std::vector<int>& logit_rows) {
  validate_sequence(weights, seq);
  const auto& cfg = weights.config;
  const int t = seq.length();
  const int v = seq.visual_count();
  const int d = cfg.model_dim;
  const int nh = cfg.num_heads;
  const int dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::vector<char> mask = visibility_matrix(seq);

  cache.x0.resize(t, d);
  if (v > 0) {
    cache.x0.topRows(v).noalias() = seq.visual->embeddings * weights.visual_projection;
    cache.x0.topRows(v) += weights.position_embedding.topRows(v);
  }
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(v + static_cast<int>(i));
    cache.x0.row(r) = weights.token_embedding.row(seq.tokens[i]) + weights.position_embedding.row(seq.positions[i]);
  }

  cache.layers.resize(static_cast<std::size_t>(cfg.num_layers));
  Mat x = cache.x0;
  std::vector<double> before(static_cast<std::size_t>(t));
  for (int l = 0; l < cfg.num_layers; ++l) {
    const LayerWeights& w = weights.layers[static_cast<std::size_t>(l)];
    LayerCache& c = cache.layers[static_cast<std::size_t>(l)];
    c.x_in = x;
    rms_norm(x, w.norm1, c.rms1, c.xhat1, c.n1);
    c.q.noalias() = c.n1 * w.wq;
    c.k.noalias() = c.n1 * w.wk;
    c.v.noalias() = c.n1 * w.wv;
    c.probs.resize(static_cast<std::size_t>(nh));
    c.attn.resize(static_cast<std::size_t>(nh));
    c.heads.resize(t, d);

    for (int h = 0; h < nh; ++h) {
      Mat& probs = c.probs[static_cast<std::size_t>(h)];
      probs.noalias() = c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose();
      probs *= scale;
      for (int i = 0; i < t; ++i) {
        auto row = row_span(probs, i);
        const char* m = &mask[static_cast<std::size_t>(i) * static_cast<std::size_t>(t)];
        for (int j = 0; j < t; ++j) {
          if (m[j] == 0) {
            row[static_cast<std::size_t>(j)] = kNegInf;
          }
        }
        const HeadSite site{l, h, i};
        if (hooks.score && hooks.score->scope.contains(site)) {
          hooks.score->edit(site, row);
        }
        softmax_row(row);
      }

      Mat& attn = c.attn[static_cast<std::size_t>(h)];
      attn = probs;
      if (hooks.attention) {
        for (int i = 0; i < t; ++i) {
          const HeadSite site{l, h, i};
          if (!hooks.attention->scope.contains(site)) {
            continue;
          }
          auto row = row_span(attn, i);
          std::copy(row.begin(), row.end(), before.begin());
          hooks.attention->edit(site, row);
          if (!hooks.attention->renormalize || std::equal(row.begin(), row.end(), before.begin())) {
            continue;
          }
          double total = 0.0;
          for (double value : row) {
            total += value;
          }
          if (!(total > 0.0) || !std::isfinite(total)) {
            throw NumericError("attention edit produced a row with non-positive mass at layer " +
                                   std::to_string(l) + " head " + std::to_string(h),
                               l, h);
          }
          for (double& value : row) {
            value /= total;
          }
        }
      }

      auto out = c.heads.middleCols(h * dh, dh);
      out.noalias() = attn * c.v.middleCols(h * dh, dh);
      if (hooks.state) {
        std::vector<double> state(static_cast<std::size_t>(dh));
        for (int i = 0; i < t; ++i) {
          const HeadSite site{l, h, i};
          if (!hooks.state->scope.contains(site)) {
            continue;
          }
          for (int k = 0; k < dh; ++k) {
            state[static_cast<std::size_t>(k)] = out(i, k);
          }
          hooks.state->edit(site, state);
          for (int k = 0; k < dh; ++k) {
            out(i, k) = state[static_cast<std::size_t>(k)];
          }
        }
      }
      if (!out.allFinite()) {
        throw NumericError("non-finite head state at layer " + std::to_string(l) + " head " + std::to_string(h),
                           l, h);
      }
    }

    c.x_mid = x;
    c.x_mid.noalias() += c.heads * w.wo;
    rms_norm(c.x_mid, w.norm2, c.rms2, c.xhat2, c.n2);
    c.pre_act.noalias() = c.n2 * w.w1;
    c.pre_act.rowwise() += w.b1.row(0);
    c.act = c.pre_act.cwiseMax(0.0);
    x = c.x_mid;
    x.noalias() += c.act * w.w2;
    x.rowwise() += w.b2.row(0);
    if (!x.allFinite()) {
      throw NumericError("non-finite residual stream after layer " + std::to_string(l), l, -1);
    }
  }

  cache.x_final = x;
  rms_norm(x, weights.final_norm, cache.rms_final, cache.xhat_final, cache.n_final);
  cache.logit_rows = logit_rows;
  if (logit_rows.empty()) {
    cache.logits.noalias() = cache.n_final * weights.unembedding;
  } else {
    cache.logits = Mat::Zero(t, cfg.vocab_size);
    for (int r : logit_rows) {
      if (r < 0 || r >= t) {
        throw ConfigError("logit row " + std::to_string(r) + " out of range");
      }
      cache.logits.row(r).noalias() = cache.n_final.row(r) * weights.unembedding;
    }
  }
  if (!cache.logits.allFinite()) {
    throw NumericError("non-finite logits");
  }
}

void run_backward(const ModelWeights& weights, const SequenceSpec& seq, const ForwardCache& cache,
                  const Mat& dlogits, std::vector<Mat>* attention_grads, ModelWeights* weight_grads) {
  const auto& cfg = weights.config;
  const int t = seq.length();
  const int v = seq.visual_count();
  const int d = cfg.model_dim;
  const int nh = cfg.num_heads;
  const int dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (dlogits.rows() != t || dlogits.cols() != cfg.vocab_size) {
    throw ConfigError("dlogits shape does not match the cached pass");
  }
  ModelWeights* g = weight_grads;
  if (attention_grads != nullptr) {
    attention_grads->assign(static_cast<std::size_t>(cfg.total_heads()), Mat());
  }

  if (g != nullptr) {
    g->unembedding.noalias() += cache.n_final.transpose() * dlogits;
  }
  Mat dn = dlogits * weights.unembedding.transpose();
  Mat dx = rms_norm_backward(dn, cache.xhat_final, cache.rms_final, weights.final_norm,
                             g != nullptr ? &g->final_norm : nullptr);

  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const LayerWeights& w = weights.layers[static_cast<std::size_t>(l)];
    const LayerCache& c = cache.layers[static_cast<std::size_t>(l)];
    LayerWeights* gl = g != nullptr ? &g->layers[static_cast<std::size_t>(l)] : nullptr;

    // Feed-forward block.
    Mat dpre = dx * w.w2.transpose();
    dpre = dpre.cwiseProduct((c.pre_act.array() > 0.0).cast<double>().matrix());
    if (gl != nullptr) {
      gl->w2.noalias() += c.act.transpose() * dx;
      gl->b2.row(0) += dx.colwise().sum();
      gl->w1.noalias() += c.n2.transpose() * dpre;
      gl->b1.row(0) += dpre.colwise().sum();
    }
    Mat dn2 = dpre * w.w1.transpose();
    Mat dmid = dx + rms_norm_backward(dn2, c.xhat2, c.rms2, w.norm2, gl != nullptr ? &gl->norm2 : nullptr);

    // Attention block.
    Mat dheads = dmid * w.wo.transpose();
    if (gl != nullptr) {
      gl->wo.noalias() += c.heads.transpose() * dmid;
    }
    Mat dq = Mat::Zero(t, d);
    Mat dk = Mat::Zero(t, d);
    Mat dv = Mat::Zero(t, d);
    for (int h = 0; h < nh; ++h) {
      const Mat& probs = c.probs[static_cast<std::size_t>(h)];
      const Mat& attn = c.attn[static_cast<std::size_t>(h)];
      const auto d_out = dheads.middleCols(h * dh, dh);
      Mat da = d_out * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() = attn.transpose() * d_out;
      const Vec inner = da.cwiseProduct(probs).rowwise().sum();
      Mat ds = probs.cwiseProduct((da.colwise() - inner).matrix());
      ds *= scale;
      dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
      if (!da.allFinite()) {
        throw NumericError("non-finite attention gradient at layer " + std::to_string(l) + " head " +
                               std::to_string(h),
                           l, h);
      }
      if (attention_grads != nullptr) {
        (*attention_grads)[static_cast<std::size_t>(l * nh + h)] = std::move(da);
      }
    }
    if (gl != nullptr) {
      gl->wq.noalias() += c.n1.transpose() * dq;
      gl->wk.noalias() += c.n1.transpose() * dk;
      gl->wv.noalias() += c.n1.transpose() * dv;
    }
    Mat dn1 = dq * w.wq.transpose();
    dn1.noalias() += dk * w.wk.transpose();
    dn1.noalias() += dv * w.wv.transpose();
    dx = dmid + rms_norm_backward(dn1, c.xhat1, c.rms1, w.norm1, gl != nullptr ? &gl->norm1 : nullptr);
  }

  if (g != nullptr) {
    if (v > 0) {
      g->visual_projection.noalias() += seq.visual->embeddings.transpose() * dx.topRows(v);
      g->position_embedding.topRows(v) += dx.topRows(v);
    }
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(v + static_cast<int>(i));
      g->token_embedding.row(seq.tokens[i]) += dx.row(r);
      g->position_embedding.row(seq.positions[i]) += dx.row(r);
    }
  }
}

}  // namespace vpfc::model
