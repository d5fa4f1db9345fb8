#include "vpfc/decode/policies.hpp"

#include "vpfc/errors.hpp"
#include "vpfc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vpfc::decode {

std::string to_string(Policy policy) {
  switch (policy) {
    case Policy::Regular: return "regular";
    case Policy::Vcd: return "vcd";
    case Policy::Sid: return "sid";
    case Policy::Enh: return "enh";
    case Policy::Vpfc: return "vpfc";
  }
  return "?";
}

Policy parse_policy(const std::string& text) {
  for (Policy p : {Policy::Regular, Policy::Vcd, Policy::Sid, Policy::Enh, Policy::Vpfc}) {
    if (to_string(p) == text) {
      return p;
    }
  }
  throw ConfigError("unknown policy '" + text + "'");
}

void PolicyParams::validate() const {
  if (!(alpha_contrast >= 0.0) || !(beta >= 0.0) || !std::isfinite(alpha_contrast) || !std::isfinite(beta)) {
    throw ConfigError("alpha_contrast and beta must be finite and >= 0");
  }
  if (!(p > 0.0 && p < 1.0)) {
    throw ConfigError("p must lie in (0,1)");
  }
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw ConfigError("sigma must be finite and >= 0");
  }
}

int MaskedVisualInput::kept() const { return static_cast<int>(std::count(keep.begin(), keep.end(), 1)); }

namespace {

Vec softmax(const Vec& z) {
  const double peak = z.maxCoeff();
  Vec p = (z.array() - peak).exp().matrix();
  return p / p.sum();
}

void check_lengths(const Vec& a, const Vec& b) {
  if (a.size() != b.size() || a.size() == 0) {
    throw ConfigError("logit vectors must be nonempty and of equal length");
  }
}

}  // namespace

Vec sid_distribution(const Vec& logit_full, const Vec& logit_vlow, double alpha) {
  check_lengths(logit_full, logit_vlow);
  return softmax(logit_full + alpha * (logit_full - logit_vlow));
}

Vec enh_distribution(const Vec& logit_full, const Vec& logit_vhigh, double beta) {
  check_lengths(logit_full, logit_vhigh);
  return softmax(logit_full + beta * (logit_vhigh - logit_full));
}

Vec vcd_distribution(const Vec& logit_full, const Vec& logit_distorted, double lambda) {
  check_lengths(logit_full, logit_distorted);
  return softmax((1.0 + lambda) * logit_full - lambda * logit_distorted);
}

double duality_deviation(const Vec& logit_full, const Vec& logit_vhigh, const Vec& logit_vlow, double alpha) {
  return (sid_distribution(logit_full, logit_vlow, alpha) - enh_distribution(logit_full, logit_vhigh, alpha))
      .cwiseAbs()
      .maxCoeff();
}

double duality_check(const Vec& logit_vhigh, const Vec& logit_vlow, double alpha) {
  check_lengths(logit_vhigh, logit_vlow);
  const Vec full = 0.5 * (logit_vhigh + logit_vlow);
  return duality_deviation(full, logit_vhigh, logit_vlow, alpha);
}

Vec visual_importance(const model::ModelWeights& weights, const model::PromptInput& input, int layer) {
  if (layer < 0 || layer >= weights.config.num_layers) {
    throw ConfigError("importance layer outside the model");
  }
  model::PromptInput plain = input;
  plain.visual_keep.clear();
  const auto trace = model::forward(weights, plain);
  const int pos = trace.layout.answer_position();
  const int v = trace.layout.visual_count;
  Vec imp = Vec::Zero(v);
  for (int h = 0; h < weights.config.num_heads; ++h) {
    imp += trace.attention_map(layer, h).row(pos).segment(trace.layout.visual_begin, v).transpose();
  }
  return imp / static_cast<double>(weights.config.num_heads);
}

MaskedVisualInput mask_by_importance(const model::PromptInput& input, const Vec& importance, double p, MaskRole role) {
  const int n = input.visual.cells();
  if (importance.size() != n) {
    throw ConfigError("importance vector must have one entry per visual token");
  }
  if (!(p > 0.0 && p <= 1.0)) {
    throw ConfigError("p must lie in (0,1]");
  }
  const int keep_count = static_cast<int>(std::lround(p * n));
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  // one ascending ranking for both roles so low and high never share a token
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return importance[a] < importance[b]; });
  if (role == MaskRole::High) {
    std::reverse(order.begin(), order.end());
  }
  MaskedVisualInput out;
  out.role = role;
  out.input = input;
  out.keep.assign(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < keep_count; ++i) {
    out.keep[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
  }
  if (keep_count == n) {
    out.input.visual_keep.clear();
  } else {
    out.input.visual_keep = out.keep;
  }
  return out;
}

MaskedVisualInput make_v_low(const model::ModelWeights& weights, const model::PromptInput& input, double p, int layer) {
  return mask_by_importance(input, visual_importance(weights, input, layer), p, MaskRole::Low);
}

MaskedVisualInput make_v_high(const model::ModelWeights& weights, const model::PromptInput& input, double p, int layer) {
  return mask_by_importance(input, visual_importance(weights, input, layer), p, MaskRole::High);
}

MaskedVisualInput make_v_distorted(const model::PromptInput& input, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) {
    throw ConfigError("sigma must be >= 0");
  }
  MaskedVisualInput out;
  out.role = MaskRole::Distorted;
  out.input = input;
  out.keep.assign(static_cast<std::size_t>(input.visual.cells()), 1);
  if (sigma > 0.0) {
    Rng rng(seed);
    Mat& e = out.input.visual.embeddings;
    for (Eigen::Index i = 0; i < e.size(); ++i) {
      e.data()[i] += sigma * rng.normal();
    }
  }
  return out;
}

PolicyOutput decode_with_policy(const model::ModelWeights& weights, const model::PromptInput& input,
                                const PolicyParams& params, int max_new, std::optional<int> stop_token) {
  params.validate();
  PolicyOutput out;
  switch (params.policy) {
    case Policy::Regular:
      out.decoded = model::greedy_decode(weights, input, {}, max_new, stop_token);
      return out;
    case Policy::Vpfc: {
      auto r = intervene::vpfc_pipeline(weights, input, params.vpfc, max_new, stop_token);
      out.decoded = std::move(r.output);
      out.record = std::move(r.record);
      return out;
    }
    default: break;
  }
  if (max_new < 1) {
    throw ConfigError("max_new must be >= 1");
  }
  model::PromptInput other;
  switch (params.policy) {
    case Policy::Vcd: other = make_v_distorted(input, params.sigma, params.distortion_seed).input; break;
    case Policy::Sid: other = make_v_low(weights, input, params.p, params.importance_layer).input; break;
    default: other = make_v_high(weights, input, params.p, params.importance_layer).input; break;
  }
  std::vector<int> generated;
  for (int step = 0; step < max_new; ++step) {
    const auto full = model::forward_with_generated(weights, input, generated);
    const auto alt = model::forward_with_generated(weights, other, generated);
    const int pos = full.length() - 1;
    const Vec lf = full.logits.row(pos).transpose();
    const Vec lo = alt.logits.row(pos).transpose();
    Vec dist;
    switch (params.policy) {
      case Policy::Vcd: dist = vcd_distribution(lf, lo, params.alpha_contrast); break;
      case Policy::Sid: dist = sid_distribution(lf, lo, params.alpha_contrast); break;
      default: dist = enh_distribution(lf, lo, params.beta); break;
    }
    const int token = model::argmax(dist);
    generated.push_back(token);
    out.decoded.tokens.push_back(token);
    out.decoded.distributions.push_back(std::move(dist));
    if (stop_token && token == *stop_token) {
      break;
    }
  }
  return out;
}

}  // namespace vpfc::decode
