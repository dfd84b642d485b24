#pragma once

// Attention-flow interventions and the consistency/bias metrics that score them.

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "himap/layout.hpp"
#include "himap/numerics/types.hpp"

namespace himap {

enum class InterventionKind { vt_block, vv_block, v_random_block };

std::string_view to_string(InterventionKind kind);
InterventionKind parse_intervention_kind(std::string_view name);

struct Intervention {
  InterventionKind kind = InterventionKind::vt_block;
  std::set<int> layers;
  std::uint64_t random_seed = 0;

  bool targets(int layer) const { return layers.count(layer) != 0; }
  void validate(int num_layers) const;
};

/// Receiver rows for v_random_block: a seeded uniform sample of |I| indices
/// drawn without replacement from the non-image positions. Sorted ascending.
std::vector<Index> random_receivers(const TokenLayout& layout, std::uint64_t seed);

/// Entries (i, j) the intervention sets to zero, for a square attention
/// matrix over the positions `positions` (original indices, one per row).
MaskX intervention_zero_mask(const TokenLayout& layout, std::span<const Index> positions,
                             const Intervention& iv);

/// Zeroes the targeted entries of post-softmax attention at `layer`. Rows are
/// not renormalized. Returns `attention` unchanged when `layer` is not targeted.
Matrix apply_intervention(const Matrix& attention, const TokenLayout& layout,
                          const Intervention& iv, int layer);

/// Fraction of examples whose first answer token is unchanged.
double label_consistency(std::span<const int> base, std::span<const int> perturbed);

/// Sequence mode: fraction of examples whose whole answer sequence is unchanged.
double label_consistency(std::span<const std::vector<int>> base,
                         std::span<const std::vector<int>> perturbed);

/// Top-5 token ids by logit, descending; ties go to the lower token id.
std::array<int, 5> top5(std::span<const double> logits);

/// Mean Jaccard similarity |a ∩ b| / |a ∪ b| of per-example top-5 sets.
double score_consistency(std::span<const std::vector<int>> base,
                         std::span<const std::vector<int>> perturbed);

/// E = C_base - C_perturbed, sign preserved.
double prediction_bias(double c_base, double c_perturbed);

/// ln(E_vv / E_vt) when both exceed 1e-9, otherwise undefined.
std::optional<double> bias_ratio(double e_vv, double e_vt);

}  // namespace himap
