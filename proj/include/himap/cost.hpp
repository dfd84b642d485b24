#pragma once

// Analytical FLOPs model for image tokens under a pruning schedule.

#include <string_view>
#include <vector>

#include "himap/model.hpp"
#include "himap/prune.hpp"

namespace himap {

struct ArchDims {
  int layers = 1;
  double hidden = 1;
  double ffn = 1;

  void validate() const;
};

/// "llava-7b", "llava-13b", or "toy" (the reference toy model).
ArchDims arch_preset(std::string_view name);

/// 4 n d^2 + 2 n^2 d + 2 n d m.
double layer_flops(double n, const ArchDims& dims);

/// Layers [first_layer, last_layer) each process `tokens` image tokens.
struct CostSegment {
  int first_layer = 0;
  int last_layer = 0;
  Index tokens = 0;
  double flops_per_layer = 0.0;
};

struct CostProfile {
  double baseline_flops = 0.0;
  double pruned_flops = 0.0;
  double eta = 0.0;
  std::vector<CostSegment> breakdown;
};

/// Baseline L * Omega(n) against the stage-wise sum, with token counts after
/// each stage taken from the same floor rule as `select_kept`.
CostProfile schedule_cost(const ArchDims& dims, Index n_image, const PruneSchedule& schedule);

CostProfile toy_model_cost(const ModelConfig& config, Index n_image, const PruneSchedule& schedule);

}  // namespace himap
