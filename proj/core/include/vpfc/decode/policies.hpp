#pragma once

#include "vpfc/intervene/intervene.hpp"
#include "vpfc/model/transformer.hpp"
#include "vpfc/model/weights.hpp"
#include "vpfc/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace vpfc::decode {

enum class Policy { Regular, Vcd, Sid, Enh, Vpfc };

std::string to_string(Policy policy);
Policy parse_policy(const std::string& text);

struct PolicyParams {
  Policy policy = Policy::Regular;
  /// Contrast strength of SID (and lambda of VCD).
  double alpha_contrast = 1.0;
  /// Pull toward the high-attention view in the enhancement contrast.
  double beta = 1.0;
  /// Kept fraction for the low/high views.
  double p = 0.25;
  /// Noise amplitude of the distorted view.
  double sigma = 1.0;
  std::uint64_t distortion_seed = 0;
  /// Layer whose attention ranks visual tokens for the low/high views.
  int importance_layer = 1;
  intervene::VpfcParams vpfc;

  void validate() const;
  bool operator==(const PolicyParams&) const = default;
};

enum class MaskRole { Low, High, Distorted };

struct MaskedVisualInput {
  model::PromptInput input;  // visual + keep flags ready for a forward pass
  std::vector<char> keep;
  MaskRole role = MaskRole::Low;

  int kept() const;
};

/// softmax(full + alpha * (full - vlow))
Vec sid_distribution(const Vec& logit_full, const Vec& logit_vlow, double alpha);
/// softmax(full + beta * (vhigh - full))
Vec enh_distribution(const Vec& logit_full, const Vec& logit_vhigh, double beta);
/// softmax((1 + lambda) * full - lambda * distorted)
Vec vcd_distribution(const Vec& logit_full, const Vec& logit_distorted, double lambda);

/// With full = (vhigh + vlow) / 2, max |sid(alpha) - enh(beta = alpha)|.
double duality_check(const Vec& logit_vhigh, const Vec& logit_vlow, double alpha);
/// Same deviation for an arbitrary full logit vector.
double duality_deviation(const Vec& logit_full, const Vec& logit_vhigh, const Vec& logit_vlow, double alpha);

/// Head-averaged attention of `layer` from the last prompt token to each visual token.
Vec visual_importance(const model::ModelWeights& weights, const model::PromptInput& input, int layer = 1);

/// Keeps round(p * G^2) tokens: the lowest (Low) or highest (High) by
/// importance, ties by ascending index.
MaskedVisualInput mask_by_importance(const model::PromptInput& input, const Vec& importance, double p, MaskRole role);
MaskedVisualInput make_v_low(const model::ModelWeights& weights, const model::PromptInput& input, double p,
                             int layer = 1);
MaskedVisualInput make_v_high(const model::ModelWeights& weights, const model::PromptInput& input, double p,
                              int layer = 1);
/// Adds seeded N(0, sigma^2) noise to every visual embedding.
MaskedVisualInput make_v_distorted(const model::PromptInput& input, double sigma, std::uint64_t seed);

struct PolicyOutput {
  model::DecodedSequence decoded;
  std::optional<intervene::InterventionRecord> record;
};

/// Greedy decoding under a policy. Contrastive policies recombine the
/// logits of parallel passes at every step.
PolicyOutput decode_with_policy(const model::ModelWeights& weights, const model::PromptInput& input,
                                const PolicyParams& params, int max_new, std::optional<int> stop_token = std::nullopt);

}  // namespace vpfc::decode
