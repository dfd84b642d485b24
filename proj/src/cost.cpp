#include "himap/cost.hpp"

#include <string>

#include "himap/errors.hpp"

namespace himap {

void ArchDims::validate() const {
  if (layers < 1 || !(hidden >= 1) || !(ffn >= 1)) {
    throw ConfigError("arch dims must all be >= 1");
  }
}

ArchDims arch_preset(std::string_view name) {
  if (name == "llava-7b") return {32, 4096, 11008};
  if (name == "llava-13b") return {40, 5120, 13824};
  if (name == "toy") return {8, 64, 128};
  throw ConfigError("unknown architecture preset '" + std::string(name) + "'");
}

double layer_flops(double n, const ArchDims& dims) {
  const double d = dims.hidden;
  const double m = dims.ffn;
  return 4.0 * n * d * d + 2.0 * n * n * d + 2.0 * n * d * m;
}

CostProfile schedule_cost(const ArchDims& dims, Index n_image, const PruneSchedule& schedule) {
  dims.validate();
  if (n_image < 0) throw ConfigError("n_image must be >= 0");
  schedule.validate(dims.layers);

  CostProfile profile;
  const double full = layer_flops(static_cast<double>(n_image), dims);
  profile.baseline_flops = dims.layers * full;

  int start = 0;
  Index tokens = n_image;
  for (const PruneStage& stage : schedule.stages) {
    const double per_layer = layer_flops(static_cast<double>(tokens), dims);
    profile.breakdown.push_back({start, stage.filter_layer, tokens, per_layer});
    profile.pruned_flops += (stage.filter_layer - start) * per_layer;
    start = stage.filter_layer;
    tokens -= pruned_count(tokens, stage.filter_ratio);
  }
  const double per_layer = layer_flops(static_cast<double>(tokens), dims);
  profile.breakdown.push_back({start, dims.layers, tokens, per_layer});
  profile.pruned_flops += (dims.layers - start) * per_layer;

  profile.eta =
      profile.baseline_flops > 0.0 ? 1.0 - profile.pruned_flops / profile.baseline_flops : 0.0;
  return profile;
}

CostProfile toy_model_cost(const ModelConfig& config, Index n_image,
                           const PruneSchedule& schedule) {
  config.validate();
  return schedule_cost(
      ArchDims{config.layers, static_cast<double>(config.hidden), static_cast<double>(config.ffn)},
      n_image, schedule);
}

}  // namespace himap
