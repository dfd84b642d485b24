#include "himap/perturb.hpp"

#include <algorithm>
#include <cmath>

#include "himap/errors.hpp"
#include "himap/rng.hpp"

namespace himap {

std::string_view to_string(InterventionKind kind) {
  switch (kind) {
    case InterventionKind::vt_block:
      return "vt";
    case InterventionKind::vv_block:
      return "vv";
    case InterventionKind::v_random_block:
      return "v_random";
  }
  return "?";
}

InterventionKind parse_intervention_kind(std::string_view name) {
  if (name == "vt" || name == "vt_block") return InterventionKind::vt_block;
  if (name == "vv" || name == "vv_block") return InterventionKind::vv_block;
  if (name == "v_random" || name == "random" || name == "v_random_block") {
    return InterventionKind::v_random_block;
  }
  throw ConfigError("unknown intervention kind '" + std::string(name) + "'");
}

void Intervention::validate(int num_layers) const {
  for (int l : layers) {
    if (l < 0 || l >= num_layers) {
      throw ConfigError("intervention layer " + std::to_string(l) + " outside [0, " +
                        std::to_string(num_layers) + ")");
    }
  }
}

std::vector<Index> random_receivers(const TokenLayout& layout, std::uint64_t seed) {
  std::vector<Index> pool = layout.sys();
  for (Index i : layout.ins()) pool.push_back(i);
  const auto want = static_cast<std::size_t>(layout.ins_len());
  Rng rng(seed);
  // Partial Fisher-Yates.
  for (std::size_t k = 0; k < want && k < pool.size(); ++k) {
    const auto pick = k + static_cast<std::size_t>(rng.below(pool.size() - k));
    std::swap(pool[k], pool[pick]);
  }
  pool.resize(std::min(want, pool.size()));
  std::sort(pool.begin(), pool.end());
  return pool;
}

MaskX intervention_zero_mask(const TokenLayout& layout, std::span<const Index> positions,
                             const Intervention& iv) {
  const auto n = static_cast<Index>(positions.size());
  MaskX zero = MaskX::Constant(n, n, false);
  std::vector<Index> receivers;
  if (iv.kind == InterventionKind::v_random_block) receivers = random_receivers(layout, iv.random_seed);
  auto is_receiver = [&](Index original) {
    switch (iv.kind) {
      case InterventionKind::vt_block:
        return layout.is_ins(original);
      case InterventionKind::vv_block:
        return layout.is_img(original);
      case InterventionKind::v_random_block:
        return std::binary_search(receivers.begin(), receivers.end(), original);
    }
    return false;
  };
  for (Index r = 0; r < n; ++r) {
    if (!is_receiver(positions[static_cast<std::size_t>(r)])) continue;
    for (Index c = 0; c < n; ++c) {
      if (layout.is_img(positions[static_cast<std::size_t>(c)])) zero(r, c) = true;
    }
  }
  return zero;
}

Matrix apply_intervention(const Matrix& attention, const TokenLayout& layout,
                          const Intervention& iv, int layer) {
  if (!iv.targets(layer)) return attention;
  if (attention.rows() != layout.size() || attention.cols() != layout.size()) {
    throw ShapeError("apply_intervention: attention is " + std::to_string(attention.rows()) + "x" +
                     std::to_string(attention.cols()) + " but layout covers " +
                     std::to_string(layout.size()) + " tokens");
  }
  std::vector<Index> positions(static_cast<std::size_t>(layout.size()));
  for (Index i = 0; i < layout.size(); ++i) positions[static_cast<std::size_t>(i)] = i;
  const MaskX zero = intervention_zero_mask(layout, positions, iv);
  Matrix out = attention;
  for (Index i = 0; i < out.rows(); ++i) {
    for (Index j = 0; j < out.cols(); ++j) {
      if (zero(i, j)) out(i, j) = 0.0;
    }
  }
  return out;
}

double label_consistency(std::span<const int> base, std::span<const int> perturbed) {
  if (base.size() != perturbed.size()) {
    throw ShapeError("label_consistency: " + std::to_string(base.size()) + " vs " +
                     std::to_string(perturbed.size()) + " predictions");
  }
  if (base.empty()) throw ShapeError("label_consistency: no examples");
  std::size_t same = 0;
  for (std::size_t k = 0; k < base.size(); ++k) same += base[k] == perturbed[k] ? 1 : 0;
  return static_cast<double>(same) / static_cast<double>(base.size());
}

double label_consistency(std::span<const std::vector<int>> base,
                         std::span<const std::vector<int>> perturbed) {
  if (base.size() != perturbed.size()) {
    throw ShapeError("label_consistency: " + std::to_string(base.size()) + " vs " +
                     std::to_string(perturbed.size()) + " sequences");
  }
  if (base.empty()) throw ShapeError("label_consistency: no examples");
  std::size_t same = 0;
  for (std::size_t k = 0; k < base.size(); ++k) same += base[k] == perturbed[k] ? 1 : 0;
  return static_cast<double>(same) / static_cast<double>(base.size());
}

std::array<int, 5> top5(std::span<const double> logits) {
  if (logits.size() < 5) throw ShapeError("top5: fewer than 5 logits");
  std::vector<int> ids(logits.size());
  for (std::size_t k = 0; k < ids.size(); ++k) ids[k] = static_cast<int>(k);
  std::partial_sort(ids.begin(), ids.begin() + 5, ids.end(), [&](int a, int b) {
    const double la = logits[static_cast<std::size_t>(a)];
    const double lb = logits[static_cast<std::size_t>(b)];
    return la != lb ? la > lb : a < b;
  });
  return {ids[0], ids[1], ids[2], ids[3], ids[4]};
}

double score_consistency(std::span<const std::vector<int>> base,
                         std::span<const std::vector<int>> perturbed) {
  if (base.size() != perturbed.size()) {
    throw ShapeError("score_consistency: " + std::to_string(base.size()) + " vs " +
                     std::to_string(perturbed.size()) + " examples");
  }
  if (base.empty()) throw ShapeError("score_consistency: no examples");
  double total = 0.0;
  for (std::size_t k = 0; k < base.size(); ++k) {
    const std::set<int> a(base[k].begin(), base[k].end());
    const std::set<int> b(perturbed[k].begin(), perturbed[k].end());
    if (base[k].size() != 5 || perturbed[k].size() != 5 || a.size() != 5 || b.size() != 5) {
      throw ShapeError("score_consistency: example " + std::to_string(k) +
                       " does not carry exactly 5 distinct tokens");
    }
    std::size_t inter = 0;
    for (int t : a) inter += b.count(t);
    const std::size_t uni = a.size() + b.size() - inter;
    total += static_cast<double>(inter) / static_cast<double>(uni);
  }
  return total / static_cast<double>(base.size());
}

double prediction_bias(double c_base, double c_perturbed) { return c_base - c_perturbed; }

std::optional<double> bias_ratio(double e_vv, double e_vt) {
  constexpr double kFloor = 1e-9;
  if (!(e_vv > kFloor) || !(e_vt > kFloor)) return std::nullopt;
  return std::log(e_vv) - std::log(e_vt);
}

}  // namespace himap
