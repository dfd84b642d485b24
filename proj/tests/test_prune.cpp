#include <algorithm>
#include <numeric>

#include "doctest.h"

#include "himap/prune.hpp"
#include "himap/rng.hpp"

using namespace himap;

namespace {

// Random causal row-stochastic matrix.
Matrix random_attention(Rng& rng, Index n) {
  Matrix a = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    double total = 0;
    for (Index j = 0; j <= i; ++j) total += (a(i, j) = rng.uniform() + 1e-3);
    a.row(i) /= total;
  }
  return a;
}

std::vector<Index> iota(Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), Index{0});
  return v;
}

// Bubble-sort style oracle: pick the best remaining token each round.
std::vector<Index> oracle_kept(const std::vector<std::pair<Index, double>>& scores, double ratio) {
  const Index n = static_cast<Index>(scores.size());
  Index drop = 0;
  while ((drop + 1) * 100 <= static_cast<Index>(n * ratio + 1e-9)) ++drop;
  std::vector<bool> taken(scores.size(), false);
  std::vector<Index> kept;
  for (Index round = 0; round < n - drop; ++round) {
    std::size_t best = scores.size();
    for (std::size_t k = 0; k < scores.size(); ++k) {
      if (taken[k]) continue;
      if (best == scores.size() || scores[k].second > scores[best].second) best = k;
    }
    taken[best] = true;
    kept.push_back(scores[best].first);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

}  // namespace

TEST_CASE("presets") {
  const auto a = PruneSchedule::preset("aggressive");
  REQUIRE(a.stages.size() == 2);
  CHECK(a.stages[0] == PruneStage{2, 50.0, Criterion::phi_sh});
  CHECK(a.stages[1] == PruneStage{8, 75.0, Criterion::phi_dp});
  CHECK(PruneSchedule::preset("none").empty());
  CHECK_THROWS_AS(PruneSchedule::preset("bogus"), ConfigError);
  CHECK(parse_criterion("fastv") == Criterion::phi_attn);
  CHECK_THROWS_AS(parse_criterion("phi_x"), ConfigError);
}

TEST_CASE("schedule validation") {
  PruneSchedule s{{PruneStage{4, 50, Criterion::phi_sh}, PruneStage{2, 50, Criterion::phi_dp}}};
  CHECK_THROWS_AS(s.validate(8), ScheduleError);
  s = PruneSchedule{{PruneStage{0, 50, Criterion::phi_sh}}};
  CHECK_THROWS_AS(s.validate(8), ScheduleError);
  s = PruneSchedule{{PruneStage{8, 50, Criterion::phi_sh}}};
  CHECK_THROWS_AS(s.validate(8), ScheduleError);
  s = PruneSchedule{{PruneStage{2, 101, Criterion::phi_sh}}};
  CHECK_THROWS_AS(s.validate(8), ScheduleError);
  // criteria are interchangeable between stages
  s = PruneSchedule{{PruneStage{2, 50, Criterion::phi_dp}, PruneStage{4, 75, Criterion::phi_sh}}};
  CHECK_NOTHROW(s.validate(8));
}

TEST_CASE("head_mean_attention") {
  Matrix h1(1, 2), h2(1, 2);
  h1 << 1, 0;
  h2 << 0, 1;
  const std::vector<Matrix> two{h1, h2};
  const Matrix m = head_mean_attention(two);
  CHECK(m(0, 0) == 0.5);
  CHECK(m(0, 1) == 0.5);
  const std::vector<Matrix> one{h1};
  CHECK(head_mean_attention(one) == h1);
  const std::vector<Matrix> same{h1, h1};
  CHECK(head_mean_attention(same) == h1);
}

TEST_CASE("phi_sh examples") {
  const TokenLayout layout(1, 4, 3);
  const auto pos = iota(8);
  SUBCASE("instruction rows uniform over n visible tokens") {
    Matrix a = Matrix::Zero(8, 8);
    for (Index i = 5; i < 8; ++i) a.row(i).setConstant(1.0 / 8.0);
    const auto s = phi_sh(a, layout, pos);
    for (const auto& [v, score] : s) CHECK(score == doctest::Approx(3.0 / 8.0));
  }
  SUBCASE("point mass on one image token") {
    Matrix a = Matrix::Zero(8, 8);
    for (Index i = 5; i < 8; ++i) a(i, 3) = 1.0;
    const auto s = phi_sh(a, layout, pos);
    CHECK(s.at(3) == 3.0);
    CHECK(s.at(1) == 0.0);
  }
}

TEST_CASE("phi_dp examples") {
  const TokenLayout layout(2, 3, 2);
  SUBCASE("first image token sees only itself among image tokens") {
    Rng rng(1);
    const Matrix a = random_attention(rng, 7);
    const auto s = phi_dp(a, layout, iota(7));
    CHECK(s.at(2) == a(2, 2));
  }
  SUBCASE("uniform row over visible tokens, one image token already pruned") {
    // positions 0,1 (system), 3,4 (image; 2 pruned), 5,6 (instruction)
    const std::vector<Index> pos{0, 1, 3, 4, 5, 6};
    Matrix a = Matrix::Zero(6, 6);
    a.row(3).head(4).setConstant(0.25);  // original token 4 sees 0,1,3,4
    const auto s = phi_dp(a, layout, pos);
    CHECK(s.at(4) == doctest::Approx(2.0 / 4.0));
  }
}

TEST_CASE("phi_attn examples") {
  const TokenLayout layout(1, 3, 2);
  Matrix a = Matrix::Zero(6, 6);
  for (Index i = 0; i < 6; ++i) a.row(i).head(i + 1).setConstant(1.0 / static_cast<double>(i + 1));
  SUBCASE("token receiving no attention") {
    Matrix b = a;
    b.col(2).setZero();
    CHECK(phi_attn(b, layout, iota(6)).at(2) == 0.0);
  }
  SUBCASE("uniform over a full square") {
    Matrix u = Matrix::Constant(6, 6, 1.0 / 6.0);
    const auto s = phi_attn(u, layout, iota(6));
    CHECK(s.at(1) == doctest::Approx(s.at(3)));
  }
}

TEST_CASE("select_kept") {
  SUBCASE("Table 1 cardinalities") {
    ImportanceScores s;
    for (Index k = 0; k < 576; ++k) s[k] = static_cast<double>((k * 37) % 101);
    const auto first = select_kept(s, 50);
    CHECK(first.size() == 288);
    ImportanceScores s2;
    for (Index k : first) s2[k] = s[k];
    CHECK(select_kept(s2, 75).size() == 72);
  }
  SUBCASE("ties keep lower indices") {
    const ImportanceScores s{{3, 1.0}, {4, 1.0}, {7, 1.0}, {9, 1.0}};
    CHECK(select_kept(s, 50) == std::vector<Index>{3, 4});
  }
  SUBCASE("rounding rule") {
    const ImportanceScores s{{5, 0.1}, {9, 0.9}, {11, 0.5}};
    CHECK(select_kept(s, 33) == std::vector<Index>{5, 9, 11});
    CHECK(select_kept(s, 34) == std::vector<Index>{9, 11});
  }
  CHECK(pruned_count(36, 50) == 18);
  CHECK(pruned_count(18, 75) == 13);
  CHECK(pruned_count(0, 50) == 0);
}

TEST_CASE("criteria and selection agree with brute-force oracles") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const Index sys = 1 + static_cast<Index>(rng.below(3));
    const Index img = 2 + static_cast<Index>(rng.below(8));
    const Index ins = 1 + static_cast<Index>(rng.below(4));
    const TokenLayout layout(sys, img, ins);
    // drop some image tokens to exercise already-pruned positions
    std::vector<Index> pos;
    for (Index p = 0; p < layout.size(); ++p) {
      if (!layout.is_img(p) || p == sys || rng.uniform() < 0.8) pos.push_back(p);
    }
    const Index n = static_cast<Index>(pos.size());
    Matrix a = random_attention(rng, n);
    if (trial % 5 == 0) a = a.unaryExpr([](double v) { return std::round(v * 4) / 4; });

    std::vector<std::pair<Index, double>> sh, dp, at;
    for (Index c = 0; c < n; ++c) {
      if (!layout.is_img(pos[c])) continue;
      double s_sh = 0, s_dp = 0, s_at = 0;
      Index seen = 0;
      for (Index r = 0; r < n; ++r) {
        if (layout.is_ins(pos[r])) s_sh += a(r, c);
        if (layout.is_img(pos[r])) s_dp += a(c, r);
        if (r > c) {
          s_at += a(r, c);
          ++seen;
        }
      }
      sh.emplace_back(pos[c], s_sh);
      dp.emplace_back(pos[c], s_dp);
      at.emplace_back(pos[c], seen == 0 ? 0.0 : s_at / static_cast<double>(seen));
    }
    const double ratio = static_cast<double>(rng.below(101));
    const std::pair<Criterion, const std::vector<std::pair<Index, double>>*> cases[] = {
        {Criterion::phi_sh, &sh}, {Criterion::phi_dp, &dp}, {Criterion::phi_attn, &at}};
    for (const auto& [crit, expected] : cases) {
      const auto got = score_image_tokens(crit, a, layout, pos);
      REQUIRE(got.size() == expected->size());
      for (const auto& [idx, val] : *expected) CHECK(got.at(idx) == doctest::Approx(val).epsilon(1e-14));
      CHECK(select_kept(got, ratio) == oracle_kept(*expected, ratio));
    }
  }
}

TEST_CASE("apply_schedule keep_map bookkeeping") {
  const TokenLayout layout(4, 36, 6);
  Rng rng(9);
  AttentionSource src = [&](int, std::span<const Index> positions) {
    return std::vector<Matrix>{random_attention(rng, static_cast<Index>(positions.size()))};
  };
  const auto keep = apply_schedule(PruneSchedule::preset("toy-aggressive"), layout, 8, src);
  REQUIRE(keep.size() == 8);
  const std::size_t expected_img[] = {36, 36, 18, 18, 5, 5, 5, 5};
  for (std::size_t l = 0; l < 8; ++l) {
    CHECK(keep[l].size() == 10 + expected_img[l]);
    if (l > 0) CHECK(std::includes(keep[l - 1].begin(), keep[l - 1].end(), keep[l].begin(), keep[l].end()));
    for (Index p : layout.sys()) CHECK(std::binary_search(keep[l].begin(), keep[l].end(), p));
    for (Index p : layout.ins()) CHECK(std::binary_search(keep[l].begin(), keep[l].end(), p));
  }
  const auto none = apply_schedule(PruneSchedule{}, layout, 8, src);
  for (const auto& k : none) CHECK(k.size() == 46);

  // stage 1 only vs stage 1 plus an R = 0 stage 2
  Rng r1(4), r2(4);
  AttentionSource s1 = [&](int, std::span<const Index> p) {
    return std::vector<Matrix>{random_attention(r1, static_cast<Index>(p.size()))};
  };
  AttentionSource s2 = [&](int, std::span<const Index> p) {
    return std::vector<Matrix>{random_attention(r2, static_cast<Index>(p.size()))};
  };
  PruneSchedule one{{PruneStage{2, 50, Criterion::phi_sh}}};
  PruneSchedule two{{PruneStage{2, 50, Criterion::phi_sh}, PruneStage{4, 0, Criterion::phi_dp}}};
  CHECK(apply_schedule(one, layout, 8, s1) == apply_schedule(two, layout, 8, s2));
}

TEST_CASE("prune_positions leaves non-image tokens alone") {
  const TokenLayout layout(2, 0, 3);
  const std::vector<Matrix> heads{Matrix::Identity(5, 5)};
  const auto pos = iota(5);
  CHECK(prune_positions(PruneStage{1, 100, Criterion::phi_sh}, heads, layout, pos) == pos);
}
