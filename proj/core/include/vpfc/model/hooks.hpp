#pragma once

#include "vpfc/model/config.hpp"

#include <climits>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace vpfc::model {

/// One (layer, head, query position) triple that a hook may touch.
struct HeadSite {
  int layer = 0;
  int head = 0;
  int position = 0;
};

/// Selects the sites a hook applies to. Empty `layers` / `heads` mean all.
/// `heads`, when set, lists explicit (layer, head) pairs and overrides `layers`.
struct HookScope {
  std::vector<int> layers;
  std::vector<HeadId> heads;
  int position_begin = 0;
  int position_end = INT_MAX;

  bool contains(const HeadSite& site) const;
};

/// Mutates one attention row (length T, post-softmax, masked entries zero).
using AttentionEditFn = std::function<void(const HeadSite&, std::span<double>)>;
/// Mutates one pre-softmax score row; masked entries are -inf.
using ScoreEditFn = std::function<void(const HeadSite&, std::span<double>)>;
/// Mutates one per-head hidden state (length d/H) before the output projection.
using StateEditFn = std::function<void(const HeadSite&, std::span<double>)>;

struct AttentionHook {
  AttentionEditFn edit;
  HookScope scope;
  /// Rows changed by the edit are rescaled to sum to 1. Only the
  /// finite-difference probes turn this off.
  bool renormalize = true;
};

struct ScoreHook {
  ScoreEditFn edit;
  HookScope scope;
};

struct StateHook {
  StateEditFn edit;
  HookScope scope;
};

struct HookSet {
  std::optional<ScoreHook> score;
  std::optional<AttentionHook> attention;
  std::optional<StateHook> state;

  bool empty() const { return !score && !attention && !state; }
};

}  // namespace vpfc::model
