#include "vpfc/lens/lens.hpp"

#include "vpfc/errors.hpp"
#include "vpfc/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vpfc::lens {

int HcvrMask::count() const { return static_cast<int>(std::count(cells.begin(), cells.end(), 1)); }

std::vector<int> HcvrMask::indices() const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(cells.size()); ++i) {
    if (cells[static_cast<std::size_t>(i)] != 0) {
      out.push_back(i);
    }
  }
  return out;
}

HcvrMask HcvrMask::complement() const {
  HcvrMask out = *this;
  for (char& c : out.cells) {
    c = c != 0 ? 0 : 1;
  }
  out.fraction = 1.0 - fraction;
  return out;
}

std::vector<char> RegionSpec::as_flags() const {
  std::vector<char> flags(static_cast<std::size_t>(grid_side * grid_side), 0);
  for (int c : cells) {
    flags[static_cast<std::size_t>(c)] = 1;
  }
  return flags;
}

int query_position(const model::ForwardTrace& trace, const model::PromptInput& input, QueryMode mode) {
  if (mode == QueryMode::ObjectWord && input.query_object_pos) {
    return trace.layout.prompt_begin + *input.query_object_pos;
  }
  return trace.layout.answer_position();
}

namespace {

void check_site(const model::ForwardTrace& trace, int layer, int head, int query_pos) {
  if (layer < 0 || layer >= trace.config.num_layers || head < 0 || head >= trace.config.num_heads) {
    throw ConfigError("head (" + std::to_string(layer) + "," + std::to_string(head) + ") out of range");
  }
  if (query_pos < 0 || query_pos >= trace.length()) {
    throw ConfigError("query position " + std::to_string(query_pos) + " out of range");
  }
}

}  // namespace

double localization_score(const model::ForwardTrace& trace, int layer, int head, int query_pos) {
  check_site(trace, layer, head, query_pos);
  const Mat& a = trace.attention_map(layer, head);
  const int v = trace.layout.visual_count;
  const auto row = a.row(query_pos).segment(trace.layout.visual_begin, v);
  const double mass = row.sum();
  if (!(mass > 0.0) || v < 2) {
    return v == 1 && mass > 0.0 ? 1.0 : 0.0;
  }
  double entropy = 0.0;
  for (int i = 0; i < v; ++i) {
    const double p = row[i] / mass;
    if (p > 0.0) {
      entropy -= p * std::log(p);
    }
  }
  return std::clamp(1.0 - entropy / std::log(static_cast<double>(v)), 0.0, 1.0);
}

std::vector<HeadId> select_localization_heads(const model::ForwardTrace& trace, int query_pos, int k, int min_layer) {
  const int nl = trace.config.num_layers;
  const int nh = trace.config.num_heads;
  if (min_layer < 0 || min_layer >= nl) {
    throw ConfigError("localization head pool is empty");
  }
  const int pool = (nl - min_layer) * nh;
  if (k < 1 || k > pool) {
    throw ConfigError("k must be in 1.." + std::to_string(pool));
  }
  std::vector<std::pair<double, HeadId>> scored;
  for (int l = min_layer; l < nl; ++l) {
    for (int h = 0; h < nh; ++h) {
      scored.emplace_back(localization_score(trace, l, h, query_pos), HeadId{l, h});
    }
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<HeadId> out;
  for (int i = 0; i < k; ++i) {
    out.push_back(scored[static_cast<std::size_t>(i)].second);
  }
  return out;
}

AttentionSummary aggregate_visual_attention(const model::ForwardTrace& trace, const std::vector<HeadId>& heads,
                                            int query_pos) {
  if (heads.empty()) {
    throw ConfigError("aggregate_visual_attention needs at least one head");
  }
  AttentionSummary s;
  s.grid_side = trace.config.grid_side;
  s.heads = heads;
  s.query_pos = query_pos;
  const int v = trace.layout.visual_count;
  s.values = Vec::Zero(v);
  for (const HeadId& id : heads) {
    check_site(trace, id.layer, id.head, query_pos);
    s.values += trace.attention_map(id.layer, id.head).row(query_pos).segment(trace.layout.visual_begin, v).transpose();
  }
  s.values /= static_cast<double>(heads.size());
  return s;
}

HcvrMask hcvr_mask(const AttentionSummary& summary, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError("HCVR fraction must lie in (0,1)");
  }
  const int n = static_cast<int>(summary.values.size());
  const int count = static_cast<int>(std::ceil(static_cast<long double>(fraction) * n));
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return summary.values[a] > summary.values[b]; });
  HcvrMask mask;
  mask.grid_side = summary.grid_side;
  mask.fraction = fraction;
  mask.cells.assign(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < count; ++i) {
    mask.cells[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
  }
  return mask;
}

namespace {

struct Center {
  double row = 0.0;
  double col = 0.0;
};

Center weighted_center(const AttentionSummary& summary, const HcvrMask& mask) {
  const std::vector<int> cells = mask.indices();
  if (cells.empty()) {
    throw ConfigError("mask is empty");
  }
  const int g = summary.grid_side;
  double total = 0.0;
  Center c;
  for (int i : cells) {
    const double w = summary.values[i];
    total += w;
    c.row += w * (i / g);
    c.col += w * (i % g);
  }
  if (total > 0.0) {
    c.row /= total;
    c.col /= total;
    return c;
  }
  c = {};
  for (int i : cells) {
    c.row += i / g;
    c.col += i % g;
  }
  c.row /= static_cast<double>(cells.size());
  c.col /= static_cast<double>(cells.size());
  return c;
}

int round_half_down(double x) { return static_cast<int>(std::ceil(x - 0.5)); }

}  // namespace

Cell centroid(const AttentionSummary& summary, const HcvrMask& mask) {
  const Center c = weighted_center(summary, mask);
  const int g = summary.grid_side;
  return {std::clamp(round_half_down(c.row), 0, g - 1), std::clamp(round_half_down(c.col), 0, g - 1)};
}

RegionSpec square_region(const Cell& center, int hcvr_count, int grid_side) {
  if (grid_side < 1 || hcvr_count < 1 || hcvr_count > grid_side * grid_side) {
    throw ConfigError("hcvr_count must be in 1..G^2");
  }
  RegionSpec r;
  r.grid_side = grid_side;
  r.centroid = {std::clamp(center.row, 0, grid_side - 1), std::clamp(center.col, 0, grid_side - 1)};
  int s = 1;
  while (s * s < hcvr_count) {
    ++s;
  }
  if (s > grid_side) {
    s = grid_side;
    r.clamped = true;
  }
  r.side = s;
  const int r0 = std::clamp(r.centroid.row - s / 2, 0, grid_side - s);
  const int c0 = std::clamp(r.centroid.col - s / 2, 0, grid_side - s);
  for (int i = r0; i < r0 + s; ++i) {
    for (int j = c0; j < c0 + s; ++j) {
      r.cells.push_back(i * grid_side + j);
    }
  }
  return r;
}

DispersionStats dispersion(const AttentionSummary& summary, const HcvrMask& mask) {
  const Center c = weighted_center(summary, mask);
  const std::vector<int> cells = mask.indices();
  const int g = summary.grid_side;
  double sq = 0.0;
  for (int i : cells) {
    const double dr = (i / g) - c.row;
    const double dc = (i % g) - c.col;
    sq += dr * dr + dc * dc;
  }
  DispersionStats d;
  d.standard_distance = std::sqrt(sq / static_cast<double>(cells.size()));
  d.center_row = c.row;
  d.center_col = c.col;
  d.cells = static_cast<int>(cells.size());
  return d;
}

std::string summary_to_csv(const AttentionSummary& summary) {
  std::string out = "row,col,value\n";
  const int g = summary.grid_side;
  for (int i = 0; i < g * g; ++i) {
    out += std::to_string(i / g) + "," + std::to_string(i % g) + "," + format_double(summary.values[i]) + "\n";
  }
  return out;
}

}  // namespace vpfc::lens
