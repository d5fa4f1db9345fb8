#include "vpfc/model/transformer.hpp"

#include "vpfc/errors.hpp"
#include "vpfc/model/engine.hpp"

#include <algorithm>
#include <cmath>

namespace vpfc::model {

bool HookScope::contains(const HeadSite& site) const {
  if (site.position < position_begin || site.position >= position_end) {
    return false;
  }
  if (!heads.empty()) {
    return std::find(heads.begin(), heads.end(), HeadId{site.layer, site.head}) != heads.end();
  }
  if (!layers.empty()) {
    return std::find(layers.begin(), layers.end(), site.layer) != layers.end();
  }
  return true;
}

namespace {

Vec softmax(const Eigen::Ref<const RowVec>& logits) {
  const double peak = logits.maxCoeff();
  Vec p = (logits.array() - peak).exp().matrix().transpose();
  p /= p.sum();
  return p;
}

TokenLayout layout_for(const PromptInput& input, int generated) {
  TokenLayout layout;
  layout.visual_begin = 0;
  layout.visual_count = input.visual.cells();
  layout.prompt_begin = layout.visual_count;
  layout.prompt_count = static_cast<int>(input.text.size());
  layout.generated_begin = layout.prompt_begin + layout.prompt_count;
  layout.generated_count = generated;
  return layout;
}

void check_prompt(const ModelWeights& weights, const PromptInput& input, int extra) {
  if (input.text.empty()) {
    throw ConfigError("prompt text must not be empty");
  }
  const int total = input.visual.cells() + static_cast<int>(input.text.size()) + extra;
  if (total > weights.config.max_seq_len) {
    throw ConfigError("sequence of " + std::to_string(total) + " tokens exceeds max_seq_len " +
                      std::to_string(weights.config.max_seq_len));
  }
  if (input.query_object_pos &&
      (*input.query_object_pos < 0 || *input.query_object_pos >= static_cast<int>(input.text.size()))) {
    throw ConfigError("query_object_pos outside the prompt");
  }
}

}  // namespace

Vec ForwardTrace::distribution(int position) const {
  if (position < 0 || position >= logits.rows()) {
    throw ConfigError("position " + std::to_string(position) + " outside trace of length " +
                      std::to_string(logits.rows()));
  }
  return softmax(logits.row(position));
}

ForwardTrace forward(const ModelWeights& weights, const PromptInput& input, const HookSet& hooks) {
  return forward_with_generated(weights, input, {}, hooks);
}

ForwardTrace forward_with_generated(const ModelWeights& weights, const PromptInput& input,
                                    const std::vector<int>& generated, const HookSet& hooks) {
  check_prompt(weights, input, static_cast<int>(generated.size()));
  const SequenceSpec seq = make_sequence(input, generated);
  ForwardCache cache;
  run_forward(weights, seq, hooks, cache);

  ForwardTrace trace;
  trace.config = weights.config;
  trace.layout = layout_for(input, static_cast<int>(generated.size()));
  trace.tokens = seq.tokens;
  const int nh = weights.config.num_heads;
  const int dh = weights.config.head_dim();
  trace.attention.reserve(static_cast<std::size_t>(weights.config.total_heads()));
  trace.head_states.reserve(static_cast<std::size_t>(weights.config.total_heads()));
  for (auto& layer : cache.layers) {
    for (int h = 0; h < nh; ++h) {
      trace.attention.push_back(std::move(layer.attn[static_cast<std::size_t>(h)]));
      trace.head_states.emplace_back(layer.heads.middleCols(h * dh, dh));
    }
  }
  trace.logits = std::move(cache.logits);
  return trace;
}

int argmax(const Vec& values) {
  int best = 0;
  for (int i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) {
      best = i;
    }
  }
  return best;
}

DecodedSequence greedy_decode(const ModelWeights& weights, const PromptInput& input, const HookSet& hooks,
                              int max_new, std::optional<int> stop_token) {
  if (max_new < 1) {
    throw ConfigError("max_new must be at least 1");
  }
  check_prompt(weights, input, max_new);
  DecodedSequence out;
  ForwardCache cache;
  for (int step = 0; step < max_new; ++step) {
    const SequenceSpec seq = make_sequence(input, out.tokens);
    const int last = seq.length() - 1;
    run_forward(weights, seq, hooks, cache, {last});
    Vec p = softmax(cache.logits.row(last));
    const int token = argmax(p);
    out.tokens.push_back(token);
    out.distributions.push_back(std::move(p));
    if (stop_token && token == *stop_token) {
      break;
    }
  }
  return out;
}

LossValue nll_loss(const ForwardTrace& trace, int target, int position, double probability_floor) {
  if (target < 0 || target >= trace.logits.cols()) {
    throw ConfigError("loss target " + std::to_string(target) + " outside vocabulary");
  }
  if (position < 0 || position >= trace.logits.rows()) {
    throw ConfigError("loss position " + std::to_string(position) + " outside trace");
  }
  const auto row = trace.logits.row(position);
  const double peak = row.maxCoeff();
  const double lse = peak + std::log((row.array() - peak).exp().sum());
  LossValue loss;
  loss.target = "token " + std::to_string(target) + " at position " + std::to_string(position);
  loss.value = std::max(0.0, lse - row(target));
  const double ceiling = -std::log(probability_floor);
  if (!std::isfinite(loss.value) || loss.value > ceiling) {
    loss.value = ceiling;
    loss.clamped = true;
  }
  return loss;
}

AttentionGradients backward_attention(const ModelWeights& weights, const PromptInput& input,
                                      const HookSet& hooks, const LossSpec& loss) {
  if (hooks.attention || hooks.score) {
    throw ConfigError("backward_attention does not differentiate through attention or score edits");
  }
  check_prompt(weights, input, 0);
  const SequenceSpec seq = make_sequence(input, {});
  const int t = seq.length();
  if (loss.position < 0 || loss.position >= t) {
    throw ConfigError("loss position " + std::to_string(loss.position) + " outside sequence");
  }
  if (loss.target < 0 || loss.target >= weights.config.vocab_size) {
    throw ConfigError("loss target " + std::to_string(loss.target) + " outside vocabulary");
  }
  ForwardCache cache;
  run_forward(weights, seq, hooks, cache, {loss.position});

  const Vec p = softmax(cache.logits.row(loss.position));
  Mat dlogits = Mat::Zero(t, weights.config.vocab_size);
  dlogits.row(loss.position) = p.transpose() * loss.scale;
  dlogits(loss.position, loss.target) -= loss.scale;

  AttentionGradients result;
  result.num_heads = weights.config.num_heads;
  run_backward(weights, seq, cache, dlogits, &result.grads, nullptr);

  ForwardTrace probe;
  probe.logits = cache.logits;
  result.loss = nll_loss(probe, loss.target, loss.position);
  result.loss.value *= loss.scale;
  return result;
}

}  // namespace vpfc::model
