#pragma once

// Low-level sequence engine shared by inference and training. A sequence is
// a visual prefix followed by text rows; text rows carry explicit positions
// and segment ids so several independent prompts can share one visual prefix
// in a single pass (segment 0 is visible to every segment).

#include "vpfc/model/config.hpp"
#include "vpfc/model/hooks.hpp"
#include "vpfc/model/weights.hpp"
#include "vpfc/tensor.hpp"

#include <vector>

namespace vpfc::model {

struct SequenceSpec {
  const VisualInput* visual = nullptr;
  std::vector<char> visual_keep;  // empty = all kept
  std::vector<int> tokens;
  std::vector<int> positions;  // per text row
  std::vector<int> segments;   // per text row

  int visual_count() const { return visual == nullptr ? 0 : visual->cells(); }
  int length() const { return visual_count() + static_cast<int>(tokens.size()); }
};

/// Builds a single-segment sequence for visual + tokens.
SequenceSpec make_sequence(const PromptInput& input, const std::vector<int>& generated);

struct LayerCache {
  Mat x_in;       // T x d residual input
  Vec rms1;       // T
  Mat xhat1;      // T x d normalized (before gain)
  Mat n1;         // T x d
  Mat q, k, v;    // T x d
  std::vector<Mat> probs;  // per head, post-softmax before attention edits
  std::vector<Mat> attn;   // per head, as used in value mixing
  Mat heads;      // T x d concatenated head states after state edits
  Mat x_mid;      // T x d after attention residual
  Vec rms2;
  Mat xhat2;
  Mat n2;
  Mat pre_act;    // T x ffn
  Mat act;        // T x ffn
};

struct ForwardCache {
  Mat x0;
  std::vector<LayerCache> layers;
  Mat x_final;
  Vec rms_final;
  Mat xhat_final;
  Mat n_final;
  Mat logits;
  /// Rows of `logits` actually computed (empty = all).
  std::vector<int> logit_rows;
};

/// Runs the decoder. When `logit_rows` is nonempty only those rows of the
/// logits are computed (the rest stay zero).
void run_forward(const ModelWeights& weights, const SequenceSpec& seq, const HookSet& hooks,
                 ForwardCache& cache, const std::vector<int>& logit_rows = {});

/// Reverse pass from dL/dlogits. Fills `attention_grads` (per layer*H+head)
/// when non-null and accumulates parameter gradients into `weight_grads`
/// when non-null.
void run_backward(const ModelWeights& weights, const SequenceSpec& seq, const ForwardCache& cache,
                  const Mat& dlogits, std::vector<Mat>* attention_grads, ModelWeights* weight_grads);

/// True when position j is visible from position i.
bool visible(const SequenceSpec& seq, int i, int j);

}  // namespace vpfc::model
