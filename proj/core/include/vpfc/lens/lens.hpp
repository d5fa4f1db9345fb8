#pragma once

#include "vpfc/model/config.hpp"
#include "vpfc/model/transformer.hpp"
#include "vpfc/tensor.hpp"

#include <string>
#include <vector>

namespace vpfc::lens {

using model::HeadId;

/// Mean attention from one query position to each visual token.
struct AttentionSummary {
  int grid_side = 0;
  Vec values;  // G*G, row-major
  std::vector<HeadId> heads;
  int query_pos = 0;

  double mass() const { return values.sum(); }
  double at(int row, int col) const { return values[row * grid_side + col]; }
};

struct HcvrMask {
  int grid_side = 0;
  std::vector<char> cells;  // G*G flags
  double fraction = 0.25;

  int count() const;
  std::vector<int> indices() const;
  /// The LCVR mask.
  HcvrMask complement() const;
};

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
};

struct RegionSpec {
  int grid_side = 0;
  Cell centroid;
  int side = 0;
  /// Side was capped at the grid side.
  bool clamped = false;
  std::vector<int> cells;  // flat indices, ascending

  std::vector<char> as_flags() const;
};

struct DispersionStats {
  double standard_distance = 0.0;
  double center_row = 0.0;
  double center_col = 0.0;
  int cells = 0;
};

/// Which prompt token reads the visual evidence.
enum class QueryMode { ObjectWord, FinalPrompt };

/// Object-word position when the prompt has one (ObjectWord mode), else the last prompt token.
int query_position(const model::ForwardTrace& trace, const model::PromptInput& input,
                   QueryMode mode = QueryMode::ObjectWord);

/// 1 - H(p)/log(G^2) for the head's visual attention p renormalized to sum 1.
/// Zero visual mass scores 0.
double localization_score(const model::ForwardTrace& trace, int layer, int head, int query_pos);

/// Top-k heads by localization score among layers >= min_layer; ties go to
/// the lower (layer, head).
std::vector<HeadId> select_localization_heads(const model::ForwardTrace& trace, int query_pos, int k,
                                              int min_layer = 0);

AttentionSummary aggregate_visual_attention(const model::ForwardTrace& trace, const std::vector<HeadId>& heads,
                                            int query_pos);

/// ceil(fraction * G^2) highest cells; ties at the threshold by ascending flat index.
HcvrMask hcvr_mask(const AttentionSummary& summary, double fraction = 0.25);

/// Attention-weighted mean of the masked cells, rounded half toward the
/// lower index per axis and clamped to the grid. Falls back to the
/// unweighted mean when the masked weight is zero.
Cell centroid(const AttentionSummary& summary, const HcvrMask& mask);

/// Square of side ceil(sqrt(hcvr_count)) around the centroid, translated
/// to fit the grid. Even sides extend one more cell toward lower indices.
RegionSpec square_region(const Cell& center, int hcvr_count, int grid_side);

/// Root mean squared distance of the masked cells to the unrounded
/// weighted centroid.
DispersionStats dispersion(const AttentionSummary& summary, const HcvrMask& mask);

/// "row,col,value" lines with a header.
std::string summary_to_csv(const AttentionSummary& summary);

}  // namespace vpfc::lens
