#include "himap/harness/evaluate.hpp"

namespace himap::harness {

AccuracyReport evaluate_accuracy(const ModelParams& params,
                                 std::span<const SyntheticExample> dataset,
                                 const PruneSchedule* schedule) {
  AccuracyReport r;
  for (const auto& ex : dataset) {
    if (predict(params, ex, schedule) == ex.gold) ++r.correct;
    ++r.total;
  }
  return r;
}

std::vector<std::vector<Index>> keep_map_for(const ModelParams& params,
                                             const SyntheticExample& example,
                                             const PruneSchedule& schedule) {
  ForwardOptions opt;
  opt.schedule = &schedule;
  return forward(params, example.prompt(), example.layout, opt).keep_map;
}

}  // namespace himap::harness
