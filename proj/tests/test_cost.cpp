#include <cmath>

#include "doctest.h"

#include "himap/cost.hpp"

using namespace himap;

namespace {

double omega(double n, double d, double m) { return 4 * n * d * d + 2 * n * n * d + 2 * n * d * m; }

}  // namespace

TEST_CASE("layer_flops") {
  CHECK(layer_flops(0, ArchDims{1, 4096, 11008}) == 0.0);
  CHECK(layer_flops(1, ArchDims{1, 1, 1}) == 8.0);
  const double f = layer_flops(576, arch_preset("llava-7b"));
  CHECK(f == doctest::Approx(9.33e10).epsilon(1e-3));
  CHECK(32 * f == doctest::Approx(2.98e12).epsilon(5e-3));
}

TEST_CASE("Table 1 FLOPs columns") {
  const auto aggressive = PruneSchedule::preset("aggressive");
  SUBCASE("LLaVA-7B") {
    const CostProfile p = schedule_cost(arch_preset("llava-7b"), 576, aggressive);
    CHECK(std::abs(p.baseline_flops / 1e12 - 2.98) <= 0.02);
    CHECK(std::abs(p.pruned_flops / 1e12 - 0.73) <= 0.02);
    CHECK(std::abs(100 * p.pruned_flops / p.baseline_flops - 24.0) <= 1.0);
  }
  SUBCASE("LLaVA-13B") {
    const ArchDims dims = arch_preset("llava-13b");
    const CostProfile p = schedule_cost(dims, 576, aggressive);
    CHECK(std::abs(p.baseline_flops / 1e12 - 5.81) <= 0.03);
    // The published 1.36 / 23% is not reachable with K2 = 8 at 40 layers; checked by the
    // acceptance run. Here the three-term sum is pinned.
    const double expected = 2 * omega(576, 5120, 13824) + 6 * omega(288, 5120, 13824) +
                            32 * omega(72, 5120, 13824);
    CHECK(p.pruned_flops == doctest::Approx(expected).epsilon(1e-14));
    CHECK(std::abs(p.pruned_flops / 1e12 - 1.291) <= 0.001);
  }
}

TEST_CASE("schedule_cost structure") {
  const ArchDims dims = arch_preset("llava-7b");
  const CostProfile none = schedule_cost(dims, 576, PruneSchedule{});
  CHECK(none.eta == 0.0);
  CHECK(none.pruned_flops == none.baseline_flops);
  REQUIRE(none.breakdown.size() == 1);

  const CostProfile p = schedule_cost(dims, 576, PruneSchedule::preset("aggressive"));
  REQUIRE(p.breakdown.size() == 3);
  CHECK(p.breakdown[0].tokens == 576);
  CHECK(p.breakdown[1].tokens == 288);
  CHECK(p.breakdown[2].tokens == 72);
  CHECK(p.breakdown[2].last_layer == 32);
  const double expected = 2 * omega(576, 4096, 11008) + 6 * omega(288, 4096, 11008) +
                          24 * omega(72, 4096, 11008);
  CHECK(p.pruned_flops == doctest::Approx(expected).epsilon(1e-14));

  PruneSchedule bad{{PruneStage{8, 50, Criterion::phi_sh}, PruneStage{8, 75, Criterion::phi_dp}}};
  CHECK_THROWS_AS(schedule_cost(dims, 576, bad), ScheduleError);
  CHECK_THROWS_AS(arch_preset("gpt-5"), ConfigError);
}

TEST_CASE("toy model cost") {
  ModelConfig c;  // L=8, d=64, m=128
  const CostProfile p = toy_model_cost(c, 36, PruneSchedule::preset("toy-aggressive"));
  // Omega(n) = 32768 n + 128 n^2 at d=64, m=128
  CHECK(omega(36, 64, 128) == 1345536.0);
  CHECK(p.baseline_flops == 8 * 1345536.0);
  CHECK(p.pruned_flops == 2 * 1345536.0 + 2 * 631296.0 + 4 * 167040.0);
  CHECK(p.eta == doctest::Approx(1.0 - 4621824.0 / 10764288.0).epsilon(1e-14));
  CHECK(p.eta >= 0.5);

  // R = 100 at both stages: image tokens vanish after stage 1
  PruneSchedule all{{PruneStage{2, 100, Criterion::phi_sh}, PruneStage{4, 100, Criterion::phi_dp}}};
  const CostProfile q = toy_model_cost(c, 36, all);
  CHECK(q.pruned_flops == 2 * 1345536.0);
}
