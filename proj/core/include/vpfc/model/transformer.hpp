#pragma once

#include "vpfc/model/config.hpp"
#include "vpfc/model/hooks.hpp"
#include "vpfc/model/weights.hpp"
#include "vpfc/tensor.hpp"

#include <optional>
#include <string>
#include <vector>

namespace vpfc::model {

/// Everything one forward pass exposes for inspection.
struct ForwardTrace {
  ModelConfig config;
  TokenLayout layout;
  std::vector<int> tokens;  // text + generated tokens, positions >= prompt_begin
  std::vector<Mat> attention;    // [layer * H + head] -> T x T, row-stochastic
  std::vector<Mat> head_states;  // [layer * H + head] -> T x (d/H), after state edits
  Mat logits;                    // T x vocab

  int length() const { return layout.length(); }
  const Mat& attention_map(int layer, int head) const {
    return attention[static_cast<std::size_t>(layer * config.num_heads + head)];
  }
  const Mat& head_state(int layer, int head) const {
    return head_states[static_cast<std::size_t>(layer * config.num_heads + head)];
  }
  /// Softmax of the logits at `position`.
  Vec distribution(int position) const;
};

struct DecodedSequence {
  std::vector<int> tokens;
  std::vector<Vec> distributions;
};

struct LossSpec {
  int target = 0;
  int position = 0;
  /// Multiplies the loss; gradients scale with it exactly.
  double scale = 1.0;
};

struct LossValue {
  double value = 0.0;
  std::string target;
  /// p(target) underflowed and the loss was clamped at -log(epsilon).
  bool clamped = false;
};

inline constexpr double kDefaultProbabilityFloor = 1e-300;

/// Full pass over visual tokens followed by the prompt text.
ForwardTrace forward(const ModelWeights& weights, const PromptInput& input, const HookSet& hooks = {});

/// Same, with already generated tokens appended after the prompt.
ForwardTrace forward_with_generated(const ModelWeights& weights, const PromptInput& input,
                                    const std::vector<int>& generated, const HookSet& hooks = {});

/// Argmax decoding; ties go to the lowest token id. Stops early after
/// emitting `stop_token` when one is given.
DecodedSequence greedy_decode(const ModelWeights& weights, const PromptInput& input, const HookSet& hooks,
                              int max_new, std::optional<int> stop_token = std::nullopt);

/// Lowest-index argmax.
int argmax(const Vec& values);

LossValue nll_loss(const ForwardTrace& trace, int target, int position,
                   double probability_floor = kDefaultProbabilityFloor);

struct AttentionGradients {
  std::vector<Mat> grads;  // [layer * H + head] -> T x T
  LossValue loss;
  int num_heads = 0;

  const Mat& at(int layer, int head) const { return grads[static_cast<std::size_t>(layer * num_heads + head)]; }
};

/// dL/dA for every head, where A is the post-softmax attention as it enters
/// value mixing. State hooks are replayed and treated as translations;
/// attention and score hooks are rejected.
AttentionGradients backward_attention(const ModelWeights& weights, const PromptInput& input,
                                      const HookSet& hooks, const LossSpec& loss);

}  // namespace vpfc::model
