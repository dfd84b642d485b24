#include <cmath>

#include "doctest.h"

#include "himap/model.hpp"
#include "himap/perturb.hpp"
#include "himap/perturb_sweep.hpp"
#include "himap/rng.hpp"

using namespace himap;

namespace {

Matrix uniform_causal(Index n) {
  Matrix a = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) a.row(i).head(i + 1).setConstant(1.0 / static_cast<double>(i + 1));
  return a;
}

ModelConfig small_config() {
  ModelConfig c;
  c.layers = 4;
  c.heads = 2;
  c.hidden = 16;
  c.ffn = 32;
  c.vocab = 24;
  c.max_seq = 24;
  c.init_seed = 3;
  c.init_std = 0.5;
  return c;
}

std::vector<SyntheticExample> random_examples(std::size_t count, const TokenLayout& layout,
                                              int vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SyntheticExample> out;
  for (std::size_t k = 0; k < count; ++k) {
    SyntheticExample ex;
    ex.layout = layout;
    for (Index i = 0; i <= layout.size(); ++i) {
      ex.tokens.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab))));
    }
    ex.gold = ex.tokens.back();
    out.push_back(ex);
  }
  return out;
}

}  // namespace

TEST_CASE("vt_block on the 6-token toy layout") {
  const TokenLayout layout(1, 3, 2);
  const Matrix a = uniform_causal(6);
  Intervention iv{InterventionKind::vt_block, {0}, 0};
  const Matrix b = apply_intervention(a, layout, iv, 0);
  // rows 4 and 5 see 3 image tokens among 5 and 6 visible tokens
  CHECK(a.row(4).sum() - b.row(4).sum() == doctest::Approx(3.0 / 5.0));
  CHECK(a.row(5).sum() - b.row(5).sum() == doctest::Approx(3.0 / 6.0));
  for (Index i = 4; i < 6; ++i) {
    for (Index j = 1; j < 4; ++j) CHECK(b(i, j) == 0.0);
  }
  CHECK(b.topRows(4) == a.topRows(4));
  CHECK(b.col(0) == a.col(0));
  CHECK(apply_intervention(a, layout, iv, 1) == a);
}

TEST_CASE("vv_block and v_random_block receivers") {
  const TokenLayout layout(2, 3, 3);
  const Matrix a = uniform_causal(8);
  const Matrix vv = apply_intervention(a, layout, Intervention{InterventionKind::vv_block, {2}, 0}, 2);
  for (Index i = 2; i < 5; ++i) {
    for (Index j = 2; j <= i; ++j) CHECK(vv(i, j) == 0.0);
  }
  CHECK(vv.bottomRows(3) == a.bottomRows(3));

  const auto receivers = random_receivers(layout, 17);
  CHECK(receivers.size() == 3);
  CHECK(receivers == random_receivers(layout, 17));
  for (Index r : receivers) CHECK_FALSE(layout.is_img(r));
  CHECK(std::is_sorted(receivers.begin(), receivers.end()));
}

TEST_CASE("intervention kinds parse") {
  CHECK(parse_intervention_kind("vt") == InterventionKind::vt_block);
  CHECK(parse_intervention_kind("vv_block") == InterventionKind::vv_block);
  CHECK(parse_intervention_kind("v_random") == InterventionKind::v_random_block);
  CHECK_THROWS_AS(parse_intervention_kind("xx"), ConfigError);
  CHECK_THROWS_AS((Intervention{InterventionKind::vt_block, {9}, 0}.validate(4)), ConfigError);
}

TEST_CASE("label consistency") {
  const std::vector<int> a{1, 2, 3};
  CHECK(label_consistency(a, a) == 1.0);
  CHECK(label_consistency(a, std::vector<int>{4, 5, 6}) == 0.0);
  CHECK(label_consistency(a, std::vector<int>{1, 9, 3}) == 2.0 / 3.0);
  CHECK_THROWS_AS(label_consistency(a, std::vector<int>{1}), ShapeError);
  const std::vector<std::vector<int>> s1{{1, 2}, {3, 4}};
  const std::vector<std::vector<int>> s2{{1, 2}, {3, 5}};
  CHECK(label_consistency(s1, s2) == 0.5);
}

TEST_CASE("score consistency") {
  const std::vector<std::vector<int>> base{{1, 2, 3, 4, 5}};
  CHECK(score_consistency(base, base) == 1.0);
  CHECK(score_consistency(base, std::vector<std::vector<int>>{{6, 7, 8, 9, 10}}) == 0.0);
  CHECK(score_consistency(base, std::vector<std::vector<int>>{{1, 2, 3, 8, 9}}) == 3.0 / 7.0);
  CHECK_THROWS_AS(score_consistency(base, std::vector<std::vector<int>>{{1, 1, 2, 3, 4}}),
                  ShapeError);

  const std::vector<double> logits{0.1, 0.5, 0.5, -1, 2, 0.3, 0.5};
  CHECK(top5(logits) == std::array<int, 5>{4, 1, 2, 6, 5});
}

TEST_CASE("prediction bias and bias ratio") {
  CHECK(prediction_bias(0.7, 0.7) == 0.0);
  CHECK(prediction_bias(1.0, 0.0) == 1.0);
  CHECK(prediction_bias(0.9, 0.65) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(prediction_bias(0.5, 0.75) == -0.25);
  CHECK(*bias_ratio(0.4, 0.4) == 0.0);
  CHECK(*bias_ratio(0.33, 0.10) == doctest::Approx(std::log(3.3)).epsilon(1e-15));
  CHECK(std::abs(*bias_ratio(0.33, 0.10) - 1.1939) < 1e-4);
  CHECK_FALSE(bias_ratio(0.0, 0.1).has_value());
  CHECK_FALSE(bias_ratio(0.1, -0.2).has_value());

  Rng rng(99);
  for (int k = 0; k < 1000; ++k) {
    const double x = rng.uniform() + 1e-6;
    const double y = rng.uniform() + 1e-6;
    CHECK(std::abs(*bias_ratio(x, y) + *bias_ratio(y, x)) <= 1e-12);
  }
}

TEST_CASE("parse_windows") {
  using W = LayerWindow;
  CHECK(parse_windows("first2,last2", 8) == std::vector<W>{{0, 1}, {6, 7}});
  CHECK(parse_windows("every3", 8) == std::vector<W>{{0, 2}, {3, 5}, {6, 7}});
  CHECK(parse_windows("2-4,5", 8) == std::vector<W>{{2, 4}, {5, 5}});
  const auto none = parse_windows("none", 8);
  REQUIRE(none.size() == 1);
  CHECK(none[0].empty());
  CHECK_THROWS_AS(parse_windows("3-9", 8), ConfigError);
  CHECK_THROWS_AS(parse_windows("frist2", 8), ConfigError);
}

TEST_CASE("forward-level intervention exactness") {
  const ModelParams p = build_model(small_config());
  const TokenLayout layout(2, 8, 4);
  const auto data = random_examples(5, layout, 24, 1);
  for (const auto& ex : data) {
    const ForwardTrace plain = forward(p, ex.prompt(), layout);
    Intervention iv{InterventionKind::vt_block, {1, 3}, 0};
    ForwardOptions o;
    o.intervention = &iv;
    const ForwardTrace t = forward(p, ex.prompt(), layout, o);
    for (int l = 0; l < 4; ++l) {
      for (int h = 0; h < 2; ++h) {
        const Matrix& a = t.attention[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
        if (iv.targets(l)) {
          for (Index i : layout.ins()) {
            double s = 0;
            for (Index j : layout.img()) s += a(i, j);
            CHECK(s == 0.0);
          }
        }
      }
    }
    // Layer 0 is untouched; at layer 1 every entry outside the block is bit-identical.
    CHECK(t.attention[0][0] == plain.attention[0][0]);
    const Matrix& a1 = t.attention[1][1];
    const Matrix& b1 = plain.attention[1][1];
    for (Index i = 0; i < a1.rows(); ++i) {
      for (Index j = 0; j < a1.cols(); ++j) {
        if (!(layout.is_ins(i) && layout.is_img(j))) CHECK(a1(i, j) == b1(i, j));
      }
    }

    Intervention nothing{InterventionKind::vt_block, {}, 0};
    ForwardOptions n;
    n.intervention = &nothing;
    CHECK(forward(p, ex.prompt(), layout, n).logits == plain.logits);
  }
}

TEST_CASE("layer sweeps") {
  const ModelParams p = build_model(small_config());
  const TokenLayout layout(2, 8, 4);
  const auto data = random_examples(12, layout, 24, 2);

  const auto none = parse_windows("none", 4);
  const auto r = layer_sweep(p, data, InterventionKind::vt_block, none);
  REQUIRE(r.size() == 1);
  CHECK(r[0].c_label == 1.0);
  CHECK(r[0].c_score == 1.0);
  CHECK(r[0].e == 0.0);
  CHECK_FALSE(r[0].d.has_value());

  const auto windows = parse_windows("first2,last2", 4);
  const auto paired = paired_sweep(p, data, windows);
  REQUIRE(paired.size() == 4);
  CHECK(paired[0].kind == InterventionKind::vv_block);
  CHECK(paired[1].kind == InterventionKind::vt_block);
  for (const auto& row : paired) {
    CHECK(row.c_label >= 0.0);
    CHECK(row.c_label <= 1.0);
    CHECK(row.e == doctest::Approx(1.0 - row.c_score));
  }
  CHECK(paired[0].d == paired[1].d);
  // deterministic
  const auto again = paired_sweep(p, data, windows);
  for (std::size_t k = 0; k < paired.size(); ++k) {
    CHECK(again[k].c_label == paired[k].c_label);
    CHECK(again[k].c_score == paired[k].c_score);
  }
}
