#include "himap/prune.hpp"

#include <algorithm>
#include <cmath>

#include "himap/errors.hpp"

namespace himap {

std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::phi_sh:
      return "phi_sh";
    case Criterion::phi_dp:
      return "phi_dp";
    case Criterion::phi_attn:
      return "phi_attn";
  }
  return "?";
}

Criterion parse_criterion(std::string_view name) {
  if (name == "phi_sh" || name == "sh" || name == "img2txt") return Criterion::phi_sh;
  if (name == "phi_dp" || name == "dp" || name == "img2img") return Criterion::phi_dp;
  if (name == "phi_attn" || name == "attn" || name == "fastv") return Criterion::phi_attn;
  throw ConfigError("unknown pruning criterion '" + std::string(name) + "'");
}

void PruneSchedule::validate(int num_layers) const {
  int previous = 0;
  for (const PruneStage& s : stages) {
    if (s.filter_layer < 1 || s.filter_layer >= num_layers) {
      throw ScheduleError("filter layer " + std::to_string(s.filter_layer) + " outside [1, " +
                          std::to_string(num_layers) + ")");
    }
    if (s.filter_layer <= previous) {
      throw ScheduleError("filter layers must be strictly increasing (" +
                          std::to_string(previous) + " then " + std::to_string(s.filter_layer) +
                          ")");
    }
    if (!(s.filter_ratio >= 0.0 && s.filter_ratio <= 100.0)) {
      throw ScheduleError("filter ratio " + std::to_string(s.filter_ratio) + " outside [0, 100]");
    }
    previous = s.filter_layer;
  }
}

const PruneStage* PruneSchedule::stage_at(int layer) const {
  for (const PruneStage& s : stages) {
    if (s.filter_layer == layer) return &s;
  }
  return nullptr;
}

PruneSchedule PruneSchedule::preset(std::string_view name) {
  if (name == "none" || name == "empty") return {};
  if (name == "aggressive") {
    return {{{2, 50.0, Criterion::phi_sh}, {8, 75.0, Criterion::phi_dp}}};
  }
  if (name == "conservative") {
    return {{{2, 50.0, Criterion::phi_sh}, {15, 75.0, Criterion::phi_dp}}};
  }
  if (name == "toy-aggressive") {
    return {{{2, 50.0, Criterion::phi_sh}, {4, 75.0, Criterion::phi_dp}}};
  }
  throw ConfigError("unknown schedule preset '" + std::string(name) + "'");
}

Matrix head_mean_attention(std::span<const Matrix> heads) {
  if (heads.empty()) throw ShapeError("head_mean_attention: no heads");
  Matrix mean = heads.front();
  for (std::size_t h = 1; h < heads.size(); ++h) {
    if (heads[h].rows() != mean.rows() || heads[h].cols() != mean.cols()) {
      throw ShapeError("head_mean_attention: heads differ in shape");
    }
    mean += heads[h];
  }
  return mean / static_cast<double>(heads.size());
}

namespace {

void check_square(const Matrix& a, std::span<const Index> positions) {
  const auto n = static_cast<Index>(positions.size());
  if (a.rows() != n || a.cols() != n) {
    throw ShapeError("pruning criterion: attention " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(n) + " positions");
  }
}

}  // namespace

ImportanceScores phi_sh(const Matrix& attention, const TokenLayout& layout,
                        std::span<const Index> positions) {
  check_square(attention, positions);
  if (layout.ins_len() == 0) throw ShapeError("phi_sh: layout has no instruction tokens");
  ImportanceScores scores;
  const auto n = static_cast<Index>(positions.size());
  for (Index c = 0; c < n; ++c) {
    const Index v = positions[static_cast<std::size_t>(c)];
    if (!layout.is_img(v)) continue;
    double s = 0.0;
    for (Index r = 0; r < n; ++r) {
      if (layout.is_ins(positions[static_cast<std::size_t>(r)])) s += attention(r, c);
    }
    scores[v] = s;
  }
  return scores;
}

ImportanceScores phi_dp(const Matrix& attention, const TokenLayout& layout,
                        std::span<const Index> positions) {
  check_square(attention, positions);
  ImportanceScores scores;
  const auto n = static_cast<Index>(positions.size());
  for (Index r = 0; r < n; ++r) {
    const Index v = positions[static_cast<std::size_t>(r)];
    if (!layout.is_img(v)) continue;
    double s = 0.0;
    for (Index c = 0; c < n; ++c) {
      if (layout.is_img(positions[static_cast<std::size_t>(c)])) s += attention(r, c);
    }
    scores[v] = s;
  }
  if (scores.empty()) throw ShapeError("phi_dp: no surviving image tokens");
  return scores;
}

ImportanceScores phi_attn(const Matrix& attention, const TokenLayout& layout,
                          std::span<const Index> positions) {
  check_square(attention, positions);
  ImportanceScores scores;
  const auto n = static_cast<Index>(positions.size());
  for (Index c = 0; c < n; ++c) {
    const Index v = positions[static_cast<std::size_t>(c)];
    if (!layout.is_img(v)) continue;
    double s = 0.0;
    Index rows = 0;
    // Rows after c are exactly the ones that causally see c, other than itself.
    for (Index r = c + 1; r < n; ++r) {
      s += attention(r, c);
      ++rows;
    }
    scores[v] = rows > 0 ? s / static_cast<double>(rows) : 0.0;
  }
  return scores;
}

ImportanceScores score_image_tokens(Criterion c, const Matrix& attention,
                                    const TokenLayout& layout, std::span<const Index> positions) {
  switch (c) {
    case Criterion::phi_sh:
      return phi_sh(attention, layout, positions);
    case Criterion::phi_dp:
      return phi_dp(attention, layout, positions);
    case Criterion::phi_attn:
      return phi_attn(attention, layout, positions);
  }
  throw ConfigError("unknown criterion");
}

Index pruned_count(Index count, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 100.0)) {
    throw ScheduleError("filter ratio " + std::to_string(ratio) + " outside [0, 100]");
  }
  // The 1e-9 absorbs representation error in ratios such as 0.29 * 100.
  const auto pruned = static_cast<Index>(
      std::floor(static_cast<double>(count) * ratio / 100.0 + 1e-9));
  return std::min(pruned, count);
}

std::vector<Index> select_kept(const ImportanceScores& scores, double ratio) {
  const auto count = static_cast<Index>(scores.size());
  const Index keep = count - pruned_count(count, ratio);
  std::vector<std::pair<Index, double>> ranked(scores.begin(), scores.end());
  // Map order is ascending index, so a stable sort on score alone keeps the
  // lower index first among ties.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<Index> kept;
  kept.reserve(static_cast<std::size_t>(keep));
  for (Index k = 0; k < keep; ++k) kept.push_back(ranked[static_cast<std::size_t>(k)].first);
  std::sort(kept.begin(), kept.end());
  return kept;
}

std::vector<Index> prune_positions(const PruneStage& stage, std::span<const Matrix> heads,
                                   const TokenLayout& layout, std::span<const Index> positions) {
  const Matrix mean = head_mean_attention(heads);
  bool any_image = false;
  for (Index p : positions) any_image = any_image || layout.is_img(p);
  if (!any_image) return {positions.begin(), positions.end()};
  const ImportanceScores scores = score_image_tokens(stage.criterion, mean, layout, positions);
  const std::vector<Index> kept = select_kept(scores, stage.filter_ratio);
  std::vector<Index> out;
  out.reserve(positions.size());
  for (Index p : positions) {
    if (!layout.is_img(p) || std::binary_search(kept.begin(), kept.end(), p)) out.push_back(p);
  }
  return out;
}

std::vector<std::vector<Index>> apply_schedule(const PruneSchedule& schedule,
                                               const TokenLayout& layout, int num_layers,
                                               const AttentionSource& attention_at) {
  schedule.validate(num_layers);
  std::vector<Index> current(static_cast<std::size_t>(layout.size()));
  for (Index i = 0; i < layout.size(); ++i) current[static_cast<std::size_t>(i)] = i;
  std::vector<std::vector<Index>> keep_map;
  keep_map.reserve(static_cast<std::size_t>(num_layers));
  for (int l = 0; l < num_layers; ++l) {
    if (const PruneStage* stage = schedule.stage_at(l)) {
      const std::vector<Matrix> heads = attention_at(l - 1, keep_map.back());
      current = prune_positions(*stage, heads, layout, current);
    }
    keep_map.push_back(current);
  }
  return keep_map;
}

}  // namespace himap
