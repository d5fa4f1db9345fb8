#pragma once

#include "vpfc/lens/lens.hpp"
#include "vpfc/model/hooks.hpp"
#include "vpfc/model/transformer.hpp"
#include "vpfc/model/weights.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vpfc::intervene {

using model::HeadId;

enum class EnhanceMode {
  /// Multiply targeted post-softmax weights by (1+f), then renormalize.
  PostSoftmax,
  /// Multiply targeted pre-softmax scores by (1+f).
  PreSoftmaxScale,
};

std::string to_string(EnhanceMode mode);
EnhanceMode parse_enhance_mode(const std::string& text);

struct EnhancementSpec {
  std::vector<char> target;  // one flag per visual token
  double factor = 0.0;
  model::HookScope scope;
  EnhanceMode mode = EnhanceMode::PostSoftmax;
  int visual_begin = 0;

  void validate() const;
};

/// Scope covering every head on the text rows of `layout`.
model::HookScope text_scope(const model::TokenLayout& layout);

/// Row transform used by the post-softmax hook (renormalizes in place).
void enhance_row(std::span<double> row, const std::vector<char>& target, double factor, int visual_begin = 0);

/// Hooks applying the enhancement. An empty target or f = 0 gives an identity transform.
model::HookSet enhance_attention(const EnhancementSpec& spec);

struct SteeringField {
  std::vector<Vec> delta;  // [layer * H + head] -> d/H
  int num_heads = 0;
  double probe_factor = 0.0;
  std::vector<char> region;
  int position = 0;

  const Vec& at(int layer, int head) const { return delta[static_cast<std::size_t>(layer * num_heads + head)]; }
  double norm(int layer, int head) const { return at(layer, head).norm(); }
};

/// Head states at the answer position with the region enhanced by
/// probe_factor minus the hook-free ones.
SteeringField steering_direction(const model::ModelWeights& weights, const model::PromptInput& input,
                                 const std::vector<char>& region, double probe_factor,
                                 EnhanceMode mode = EnhanceMode::PostSoftmax);

/// h <- h + alpha * delta on the selected heads from `position_begin` on.
model::HookSet apply_steering(const SteeringField& field, const std::vector<HeadId>& heads, double alpha,
                              int position_begin);

struct HeadImportance {
  std::vector<double> values;  // [layer * H + head]
  int num_layers = 0;
  int num_heads = 0;
  model::LossSpec loss;

  double at(int layer, int head) const { return values[static_cast<std::size_t>(layer * num_heads + head)]; }
};

/// I = sum |A .* dL/dA| per head.
HeadImportance importance_from(const std::vector<Mat>& attention, const std::vector<Mat>& grads, int num_layers,
                               int num_heads);

HeadImportance head_importance(const model::ModelWeights& weights, const model::PromptInput& input,
                               const model::LossSpec& loss);

/// Top max(1, floor(gamma * L * H)) heads; ties go to the lower (layer, head).
std::vector<HeadId> select_heads(const HeadImportance& importance, double gamma);

struct VpfcParams {
  double alpha_steer = 4.0;
  double gamma = 0.25;
  double probe_factor = 0.05;
  double hcvr_fraction = 0.25;
  bool centroid_mode = true;
  int localization_heads = 8;
  int min_layer = 1;
  lens::QueryMode query_mode = lens::QueryMode::ObjectWord;
  EnhanceMode enhance_mode = EnhanceMode::PostSoftmax;
  /// Saliency target; the baseline greedy token when unset.
  std::optional<int> loss_target;

  void validate(const model::ModelConfig& config) const;
  bool operator==(const VpfcParams&) const = default;
};

struct InterventionRecord {
  int baseline_token = 0;
  int query_pos = 0;
  int answer_pos = 0;
  std::vector<HeadId> localization_heads;
  lens::AttentionSummary summary;
  lens::HcvrMask mask;
  std::optional<lens::Cell> centroid;
  std::optional<lens::RegionSpec> region;
  std::vector<char> target;
  std::vector<double> delta_norms;  // [layer * H + head]
  HeadImportance importance;
  std::vector<HeadId> selected_heads;
  std::vector<int> output_tokens;

  /// JSON audit document.
  std::string to_json() const;
};

struct VpfcResult {
  model::DecodedSequence output;
  InterventionRecord record;
};

/// Baseline pass, localization heads, HCVR mask, centroid square (or raw
/// mask when centroid_mode is off), probe steering field, saliency head
/// selection, steered greedy decode. Errors name the failing stage.
VpfcResult vpfc_pipeline(const model::ModelWeights& weights, const model::PromptInput& input, const VpfcParams& params,
                         int max_new = 1, std::optional<int> stop_token = std::nullopt);

}  // namespace vpfc::intervene
