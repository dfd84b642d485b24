#pragma once

#include <span>
#include <vector>

#include "himap/example.hpp"
#include "himap/model.hpp"
#include "himap/prune.hpp"

namespace himap::harness {

struct AccuracyReport {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
};

/// Greedy answer against gold for every example, optionally under a schedule.
AccuracyReport evaluate_accuracy(const ModelParams& params,
                                 std::span<const SyntheticExample> dataset,
                                 const PruneSchedule* schedule = nullptr);

/// keep_map of the prompt pass for one example.
std::vector<std::vector<Index>> keep_map_for(const ModelParams& params,
                                             const SyntheticExample& example,
                                             const PruneSchedule& schedule);

}  // namespace himap::harness
