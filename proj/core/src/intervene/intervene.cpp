#include "vpfc/intervene/intervene.hpp"

#include "vpfc/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace vpfc::intervene {

std::string to_string(EnhanceMode mode) {
  return mode == EnhanceMode::PostSoftmax ? "post_softmax" : "pre_softmax_scale";
}

EnhanceMode parse_enhance_mode(const std::string& text) {
  if (text == "post_softmax") return EnhanceMode::PostSoftmax;
  if (text == "pre_softmax_scale") return EnhanceMode::PreSoftmaxScale;
  throw ConfigError("unknown enhancement mode '" + text + "'");
}

void EnhancementSpec::validate() const {
  if (!std::isfinite(factor) || factor < 0.0) {
    throw ConfigError("enhancement factor must be finite and >= 0");
  }
  if (visual_begin < 0) {
    throw ConfigError("visual_begin must be >= 0");
  }
}

model::HookScope text_scope(const model::TokenLayout& layout) {
  model::HookScope scope;
  scope.position_begin = layout.prompt_begin;
  return scope;
}

void enhance_row(std::span<double> row, const std::vector<char>& target, double factor, int visual_begin) {
  double total = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    const int cell = static_cast<int>(j) - visual_begin;
    if (cell >= 0 && cell < static_cast<int>(target.size()) && target[static_cast<std::size_t>(cell)] != 0) {
      row[j] *= 1.0 + factor;
    }
    total += row[j];
  }
  if (total > 0.0) {
    for (double& x : row) {
      x /= total;
    }
  }
}

model::HookSet enhance_attention(const EnhancementSpec& spec) {
  spec.validate();
  model::HookSet hooks;
  if (spec.factor == 0.0 || std::none_of(spec.target.begin(), spec.target.end(), [](char c) { return c != 0; })) {
    return hooks;
  }
  const std::vector<char> target = spec.target;
  const double scale = 1.0 + spec.factor;
  const int begin = spec.visual_begin;
  auto targeted = [target, begin](std::size_t j) {
    const int cell = static_cast<int>(j) - begin;
    return cell >= 0 && cell < static_cast<int>(target.size()) && target[static_cast<std::size_t>(cell)] != 0;
  };
  if (spec.mode == EnhanceMode::PostSoftmax) {
    hooks.attention = model::AttentionHook{[targeted, scale](const model::HeadSite&, std::span<double> row) {
                                             for (std::size_t j = 0; j < row.size(); ++j) {
                                               if (targeted(j)) {
                                                 row[j] *= scale;
                                               }
                                             }
                                           },
                                           spec.scope, true};
  } else {
    hooks.score = model::ScoreHook{[targeted, scale](const model::HeadSite&, std::span<double> row) {
                                     for (std::size_t j = 0; j < row.size(); ++j) {
                                       if (targeted(j) && std::isfinite(row[j])) {
                                         row[j] *= scale;
                                       }
                                     }
                                   },
                                   spec.scope};
  }
  return hooks;
}

SteeringField steering_direction(const model::ModelWeights& weights, const model::PromptInput& input,
                                 const std::vector<char>& region, double probe_factor, EnhanceMode mode) {
  const auto base = model::forward(weights, input);
  EnhancementSpec spec;
  spec.target = region;
  spec.factor = probe_factor;
  spec.scope = text_scope(base.layout);
  spec.mode = mode;
  spec.visual_begin = base.layout.visual_begin;
  const auto hooks = enhance_attention(spec);
  const int pos = base.layout.answer_position();
  const auto& cfg = weights.config;

  SteeringField field;
  field.num_heads = cfg.num_heads;
  field.probe_factor = probe_factor;
  field.region = region;
  field.position = pos;
  if (hooks.empty()) {
    field.delta.assign(static_cast<std::size_t>(cfg.total_heads()), Vec::Zero(cfg.head_dim()));
    return field;
  }
  const auto probed = model::forward(weights, input, hooks);
  for (int l = 0; l < cfg.num_layers; ++l) {
    for (int h = 0; h < cfg.num_heads; ++h) {
      field.delta.push_back((probed.head_state(l, h).row(pos) - base.head_state(l, h).row(pos)).transpose());
    }
  }
  return field;
}

model::HookSet apply_steering(const SteeringField& field, const std::vector<HeadId>& heads, double alpha,
                              int position_begin) {
  model::HookSet hooks;
  if (alpha == 0.0 || heads.empty()) {
    return hooks;
  }
  const int nh = field.num_heads;
  for (const HeadId& id : heads) {
    if (id.layer < 0 || id.head < 0 || id.head >= nh ||
        static_cast<std::size_t>(id.layer * nh + id.head) >= field.delta.size()) {
      throw ConfigError("steering head outside the field");
    }
  }
  model::HookScope scope;
  scope.heads = heads;
  scope.position_begin = position_begin;
  const std::vector<Vec> delta = field.delta;
  hooks.state = model::StateHook{[delta, nh, alpha](const model::HeadSite& site, std::span<double> h) {
                                   const Vec& d = delta[static_cast<std::size_t>(site.layer * nh + site.head)];
                                   for (std::size_t k = 0; k < h.size(); ++k) {
                                     h[k] += alpha * d[static_cast<Eigen::Index>(k)];
                                   }
                                 },
                                 scope};
  return hooks;
}

HeadImportance importance_from(const std::vector<Mat>& attention, const std::vector<Mat>& grads, int num_layers,
                               int num_heads) {
  if (attention.size() != grads.size() || static_cast<int>(attention.size()) != num_layers * num_heads) {
    throw ConfigError("attention and gradient tables do not match");
  }
  HeadImportance imp;
  imp.num_layers = num_layers;
  imp.num_heads = num_heads;
  for (std::size_t i = 0; i < attention.size(); ++i) {
    imp.values.push_back(attention[i].cwiseProduct(grads[i]).cwiseAbs().sum());
  }
  return imp;
}

HeadImportance head_importance(const model::ModelWeights& weights, const model::PromptInput& input,
                               const model::LossSpec& loss) {
  const auto grads = model::backward_attention(weights, input, {}, loss);
  const auto trace = model::forward(weights, input);
  HeadImportance imp = importance_from(trace.attention, grads.grads, weights.config.num_layers,
                                       weights.config.num_heads);
  imp.loss = loss;
  return imp;
}

std::vector<HeadId> select_heads(const HeadImportance& importance, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw ConfigError("gamma must lie in (0,1]");
  }
  const int total = importance.num_layers * importance.num_heads;
  const int count =
      std::max(1, static_cast<int>(std::floor(static_cast<long double>(gamma) * static_cast<long double>(total))));
  std::vector<HeadId> ids;
  for (int l = 0; l < importance.num_layers; ++l) {
    for (int h = 0; h < importance.num_heads; ++h) {
      ids.push_back({l, h});
    }
  }
  std::stable_sort(ids.begin(), ids.end(), [&](const HeadId& a, const HeadId& b) {
    const double ia = importance.at(a.layer, a.head);
    const double ib = importance.at(b.layer, b.head);
    return ia != ib ? ia > ib : a < b;
  });
  ids.resize(static_cast<std::size_t>(count));
  return ids;
}

void VpfcParams::validate(const model::ModelConfig& config) const {
  if (!std::isfinite(alpha_steer)) {
    throw ConfigError("alpha_steer must be finite");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw ConfigError("gamma must lie in (0,1]");
  }
  if (!std::isfinite(probe_factor) || probe_factor < 0.0) {
    throw ConfigError("probe factor must be finite and >= 0");
  }
  if (!(hcvr_fraction > 0.0 && hcvr_fraction < 1.0)) {
    throw ConfigError("hcvr fraction must lie in (0,1)");
  }
  if (min_layer < 0 || min_layer >= config.num_layers) {
    throw ConfigError("min_layer outside the model");
  }
  if (localization_heads < 1 || localization_heads > (config.num_layers - min_layer) * config.num_heads) {
    throw ConfigError("localization head count outside the head pool");
  }
}

namespace {

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError(std::string("vpfc stage '") + name + "': " + e.what(), e.layer(), e.head());
  } catch (const FormatError& e) {
    throw FormatError(std::string("vpfc stage '") + name + "': " + e.what());
  } catch (const Error& e) {
    throw ConfigError(std::string("vpfc stage '") + name + "': " + e.what());
  }
}

nlohmann::json heads_json(const std::vector<HeadId>& heads) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& h : heads) {
    a.push_back({h.layer, h.head});
  }
  return a;
}

nlohmann::json flags_json(const std::vector<char>& flags) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(flags.size()); ++i) {
    if (flags[static_cast<std::size_t>(i)] != 0) {
      out.push_back(i);
    }
  }
  return out;
}

}  // namespace

std::string InterventionRecord::to_json() const {
  nlohmann::json j;
  j["baseline_token"] = baseline_token;
  j["query_pos"] = query_pos;
  j["answer_pos"] = answer_pos;
  j["localization_heads"] = heads_json(localization_heads);
  j["summary"] = {{"grid_side", summary.grid_side},
                  {"values", std::vector<double>(summary.values.data(), summary.values.data() + summary.values.size())}};
  j["hcvr_cells"] = flags_json(mask.cells);
  j["centroid"] = centroid ? nlohmann::json{centroid->row, centroid->col} : nlohmann::json(nullptr);
  j["region"] = region ? nlohmann::json{{"side", region->side}, {"clamped", region->clamped}, {"cells", region->cells}}
                       : nlohmann::json(nullptr);
  j["target_cells"] = flags_json(target);
  j["delta_norms"] = delta_norms;
  j["importance"] = importance.values;
  j["loss_target"] = importance.loss.target;
  j["selected_heads"] = heads_json(selected_heads);
  j["output_tokens"] = output_tokens;
  return j.dump(1);
}

VpfcResult vpfc_pipeline(const model::ModelWeights& weights, const model::PromptInput& input, const VpfcParams& params,
                         int max_new, std::optional<int> stop_token) {
  params.validate(weights.config);
  VpfcResult result;
  InterventionRecord& rec = result.record;
  const auto baseline = stage("baseline", [&] { return model::forward(weights, input); });
  rec.answer_pos = baseline.layout.answer_position();
  rec.baseline_token = model::argmax(baseline.distribution(rec.answer_pos));
  rec.query_pos = lens::query_position(baseline, input, params.query_mode);

  rec.localization_heads = stage("localization_heads", [&] {
    return lens::select_localization_heads(baseline, rec.query_pos, params.localization_heads, params.min_layer);
  });
  rec.summary = stage("aggregate", [&] {
    return lens::aggregate_visual_attention(baseline, rec.localization_heads, rec.query_pos);
  });
  rec.mask = stage("hcvr_mask", [&] { return lens::hcvr_mask(rec.summary, params.hcvr_fraction); });
  stage("region", [&] {
    if (params.centroid_mode) {
      rec.centroid = lens::centroid(rec.summary, rec.mask);
      rec.region = lens::square_region(*rec.centroid, rec.mask.count(), rec.summary.grid_side);
      rec.target = rec.region->as_flags();
    } else {
      rec.target = rec.mask.cells;
    }
    return 0;
  });
  const SteeringField field = stage("steering_direction", [&] {
    return steering_direction(weights, input, rec.target, params.probe_factor, params.enhance_mode);
  });
  for (const Vec& d : field.delta) {
    rec.delta_norms.push_back(d.norm());
  }
  rec.importance = stage("head_importance", [&] {
    return head_importance(weights, input, model::LossSpec{params.loss_target.value_or(rec.baseline_token),
                                                           rec.answer_pos, 1.0});
  });
  rec.selected_heads = stage("select_heads", [&] { return select_heads(rec.importance, params.gamma); });
  result.output = stage("decode", [&] {
    const auto hooks = apply_steering(field, rec.selected_heads, params.alpha_steer, rec.answer_pos);
    return model::greedy_decode(weights, input, hooks, max_new, stop_token);
  });
  rec.output_tokens = result.output.tokens;
  return result;
}

}  // namespace vpfc::intervene
