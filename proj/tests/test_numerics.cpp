#include <cmath>
#include <limits>

#include "doctest.h"

#include "himap/numerics/gradcheck.hpp"
#include "himap/numerics/kernels.hpp"
#include "himap/numerics/tape.hpp"
#include "himap/rng.hpp"

using namespace himap;

namespace {

Matrix mat(Index r, Index c, std::initializer_list<double> v) {
  Matrix m(r, c);
  auto it = v.begin();
  for (Index i = 0; i < r; ++i) {
    for (Index j = 0; j < c; ++j) m(i, j) = *it++;
  }
  return m;
}

Matrix random_matrix(Rng& rng, Index r, Index c, double scale = 1.0) {
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i) {
    for (Index j = 0; j < c; ++j) m(i, j) = rng.normal() * scale;
  }
  return m;
}

}  // namespace

TEST_CASE("matmul examples") {
  const Matrix a = mat(2, 2, {1, 2, 3, 4});
  CHECK(matmul(Matrix(Matrix::Identity(2, 2)), a) == a);
  CHECK(matmul(a, Matrix(Matrix::Zero(2, 2))) == Matrix::Zero(2, 2));
  CHECK(matmul(a, mat(2, 2, {5, 6, 7, 8})) == mat(2, 2, {19, 22, 43, 50}));
}

TEST_CASE("matmul shape error names both shapes") {
  try {
    matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3 x 2x3") != std::string::npos);
  }
}

TEST_CASE("masked_row_softmax") {
  SUBCASE("symmetric row") {
    const Matrix y = masked_row_softmax(mat(1, 2, {0, 0}), MaskX::Constant(1, 2, true));
    CHECK(y(0, 0) == doctest::Approx(0.5));
    CHECK(y(0, 1) == doctest::Approx(0.5));
  }
  SUBCASE("single allowed entry") {
    MaskX m(1, 2);
    m << true, false;
    const Matrix y = masked_row_softmax(mat(1, 2, {3.7, 100}), m);
    CHECK(y(0, 0) == 1.0);
    CHECK(y(0, 1) == 0.0);
  }
  SUBCASE("[1,2,3] against direct evaluation") {
    const Matrix y = masked_row_softmax(mat(1, 3, {1, 2, 3}), MaskX::Constant(1, 3, true));
    const long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
    for (int k = 0; k < 3; ++k) {
      CHECK(y(0, k) == doctest::Approx(static_cast<double>(std::exp(k + 1.0L) / z)).epsilon(1e-14));
    }
    CHECK(y(0, 0) == doctest::Approx(0.09003057).epsilon(1e-7));
    CHECK(y(0, 1) == doctest::Approx(0.24472847).epsilon(1e-7));
    CHECK(y(0, 2) == doctest::Approx(0.66524096).epsilon(1e-7));
  }
  SUBCASE("rows sum to one, masked entries exact zero") {
    Rng rng(3);
    const Matrix s = random_matrix(rng, 6, 6, 5.0);
    const MaskX m = causal_mask(6);
    const Matrix y = masked_row_softmax(s, m);
    for (Index i = 0; i < 6; ++i) {
      CHECK(std::abs(y.row(i).sum() - 1.0) < 1e-12);
      for (Index j = i + 1; j < 6; ++j) CHECK(y(i, j) == 0.0);
    }
  }
  SUBCASE("large scores stay finite") {
    const Matrix y = masked_row_softmax(mat(1, 2, {1e300, 1e300}), MaskX::Constant(1, 2, true));
    CHECK(y(0, 0) == doctest::Approx(0.5));
  }
  SUBCASE("fully masked row") {
    MaskX m = MaskX::Constant(2, 2, true);
    m(1, 0) = m(1, 1) = false;
    try {
      masked_row_softmax(Matrix(Matrix::Zero(2, 2)), m);
      FAIL("expected DegenerateRowError");
    } catch (const DegenerateRowError& e) {
      CHECK(e.row() == 1);
    }
  }
}

TEST_CASE("layer_norm") {
  const RowVector one = RowVector::Ones(3);
  const RowVector zero = RowVector::Zero(3);
  SUBCASE("constant row") {
    const Matrix y = layer_norm<double>(mat(1, 3, {4, 4, 4}), one, zero, 1e-5);
    CHECK(y.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("already normalized") {
    const Matrix y =
        layer_norm<double>(mat(1, 2, {1, -1}), RowVector::Ones(2), RowVector::Zero(2), 1e-12);
    CHECK(y(0, 0) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(y(0, 1) == doctest::Approx(-1.0).epsilon(1e-10));
  }
  SUBCASE("[1,2,3]") {
    const Matrix y = layer_norm<double>(mat(1, 3, {1, 2, 3}), one, zero, 1e-5);
    CHECK(std::abs(y(0, 0) + 1.22474) < 1e-4);
    CHECK(std::abs(y(0, 1)) < 1e-12);
    CHECK(std::abs(y(0, 2) - 1.22474) < 1e-4);
    // (x - mu) / sqrt(var + eps) with population variance 2/3.
    CHECK(y(0, 2) == doctest::Approx(1.0 / std::sqrt(2.0 / 3.0 + 1e-5)).epsilon(1e-14));
  }
  SUBCASE("gain/bias shape error") {
    CHECK_THROWS_AS(layer_norm<double>(mat(1, 3, {1, 2, 3}), RowVector::Ones(2), zero, 1e-5),
                    ShapeError);
  }
}

TEST_CASE("gelu") {
  CHECK(gelu_scalar(0.0) == 0.0);
  CHECK(gelu_scalar(30.0) == doctest::Approx(30.0).epsilon(1e-6));
  CHECK(std::abs(gelu_scalar(1.0) - 0.841192) < 1e-5);
  // tanh form satisfies gelu(x) - gelu(-x) = x
  CHECK(gelu_scalar(2.0) - gelu_scalar(-2.0) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("cross_entropy") {
  RowVector uniform = RowVector::Constant(4, 0.3);
  CHECK(cross_entropy<double>(uniform, 1) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  RowVector dominant(3);
  dominant << 0.0, std::numeric_limits<double>::infinity(), 1.0;
  CHECK(cross_entropy<double>(dominant, 1) == 0.0);
  RowVector big(3);
  big << 0.0, 800.0, 1.0;
  CHECK(cross_entropy<double>(big, 1) < 1e-300);
  RowVector l(3);
  l << 1.0, 2.0, 3.0;
  CHECK(std::abs(cross_entropy<double>(l, 2) - 0.407606) < 1e-5);
  const double direct = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  CHECK(cross_entropy<double>(l, 2) == doctest::Approx(direct).epsilon(1e-14));
  CHECK_THROWS_AS(cross_entropy<double>(l, 3), IndexError);
  CHECK_THROWS_AS(cross_entropy<double>(l, -1), IndexError);
}

TEST_CASE("central differences") {
  std::function<double(const Matrix&)> sq = [](const Matrix& x) { return x(0, 0) * x(0, 0); };
  const Matrix g = central_difference(sq, mat(1, 1, {3.0}), 1e-5);
  CHECK(g(0, 0) == doctest::Approx(6.0).epsilon(1e-9));

  const auto report = finite_difference_check<double>(
      [](GradTape& t, const std::vector<Var>& v) {
        return t.sum(t.matmul(v[0], v[0]));
      },
      {mat(1, 1, {3.0})}, 1e-5);
  CHECK(report.analytic[0](0, 0) == doctest::Approx(6.0));
  CHECK(report.numeric[0](0, 0) == doctest::Approx(6.0).epsilon(1e-9));
  CHECK(report.max_rel_error < 1e-10);

  const auto constant = finite_difference_check<double>(
      [](GradTape& t, const std::vector<Var>& v) { return t.sum(t.scale(v[0], 0.0)); },
      {mat(1, 2, {1.0, 2.0})}, 1e-5);
  CHECK(constant.analytic[0].cwiseAbs().maxCoeff() == 0.0);
  CHECK(constant.numeric[0].cwiseAbs().maxCoeff() == 0.0);

  std::function<double(const Matrix&)> bad = [](const Matrix&) {
    return std::numeric_limits<double>::quiet_NaN();
  };
  CHECK_THROWS_AS(central_difference(bad, mat(1, 1, {1.0}), 1e-5), EvaluationError);
}

TEST_CASE("tape ops match central differences") {
  Rng rng(11);
  const double eps = 1e-5;
  auto check = [&](const TapeObjective<double>& f, std::vector<Matrix> params) {
    const auto report = finite_difference_check<double>(f, params, eps);
    CHECK(report.max_rel_error < 1e-6);
  };
  // Weighting by a fixed random matrix makes every output entry matter.
  const Matrix w35 = random_matrix(rng, 3, 5);
  const Matrix w44 = random_matrix(rng, 4, 4);
  auto dot = [](GradTape& t, Var out, const Matrix& w) {
    // sum(out .* w) via sum over the diagonal of out * w^T
    Matrix eye = Matrix::Identity(w.rows(), w.rows());
    Var prod = t.matmul_transposed(out, t.constant(w));
    return t.sum(t.zero_entries(prod, (eye.array() == 0.0).matrix()));
  };

  SUBCASE("matmul") {
    check([&](GradTape& t, const std::vector<Var>& v) { return dot(t, t.matmul(v[0], v[1]), w35); },
          {random_matrix(rng, 3, 2), random_matrix(rng, 2, 5)});
  }
  SUBCASE("matmul_transposed") {
    check([&](GradTape& t, const std::vector<Var>& v) {
      return dot(t, t.matmul_transposed(v[0], v[1]), w35);
    },
          {random_matrix(rng, 3, 2), random_matrix(rng, 5, 2)});
  }
  SUBCASE("masked softmax") {
    check([&](GradTape& t, const std::vector<Var>& v) {
      return dot(t, t.masked_softmax(v[0], causal_mask(4)), w44);
    },
          {random_matrix(rng, 4, 4)});
  }
  SUBCASE("layer norm") {
    check([&](GradTape& t, const std::vector<Var>& v) {
      return dot(t, t.layer_norm(v[0], v[1], v[2], 1e-5), w44);
    },
          {random_matrix(rng, 4, 4), random_matrix(rng, 1, 4), random_matrix(rng, 1, 4)});
  }
  SUBCASE("gelu") {
    check([&](GradTape& t, const std::vector<Var>& v) { return dot(t, t.gelu(v[0]), w35); },
          {random_matrix(rng, 3, 5, 2.0)});
  }
  SUBCASE("cross entropy") {
    check([&](GradTape& t, const std::vector<Var>& v) { return t.cross_entropy(v[0], 1, 3); },
          {random_matrix(rng, 3, 5)});
  }
  SUBCASE("gather, cols, hcat, add, scale") {
    check([&](GradTape& t, const std::vector<Var>& v) {
      Var g = t.gather_rows(v[0], {2, 0, 2, 1});
      Var parts = t.hcat({t.cols(g, 0, 2), t.scale(t.cols(g, 2, 2), -1.5)});
      return dot(t, t.add(parts, v[1]), w44);
    },
          {random_matrix(rng, 3, 4), random_matrix(rng, 4, 4)});
  }
  SUBCASE("block, vcat") {
    check([&](GradTape& t, const std::vector<Var>& v) {
      Var top = t.block(v[0], 0, 1, 2, 4);
      Var bottom = t.block(v[0], 1, 0, 2, 4);
      return dot(t, t.vcat({top, t.scale(bottom, 2.0)}), w44);
    },
          {random_matrix(rng, 3, 5)});
  }
}

TEST_CASE("tape state errors") {
  GradTape t;
  Var x = t.leaf(mat(1, 1, {2.0}), "x");
  Var y = t.matmul(x, x);
  CHECK_THROWS_AS(t.grad(x), StateError);
  t.backward(y);
  CHECK(t.grad("x")(0, 0) == doctest::Approx(4.0));
  CHECK_THROWS_AS(t.backward(y), StateError);
  CHECK_THROWS_AS(t.grad("nope"), StateError);

  GradTape t2;
  Var m = t2.leaf(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(t2.backward(m), ShapeError);
}
