#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "himap/errors.hpp"
#include "himap/numerics/tape.hpp"

namespace himap {

/// Central-difference gradient of a scalar function of one matrix.
template <typename Scalar>
MatrixX<Scalar> central_difference(const std::function<Scalar(const MatrixX<Scalar>&)>& f,
                                   MatrixX<Scalar> x, Scalar eps) {
  if (!(eps > 0)) throw EvaluationError("central_difference: eps must be positive");
  MatrixX<Scalar> g(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      const Scalar saved = x(i, j);
      x(i, j) = saved + eps;
      const Scalar up = f(x);
      x(i, j) = saved - eps;
      const Scalar down = f(x);
      x(i, j) = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw EvaluationError("central_difference: non-finite function value");
      }
      g(i, j) = (up - down) / (Scalar(2) * eps);
    }
  }
  return g;
}

/// max over entries of |a - n| / max(1e-8, |a| + |n|).
template <typename Scalar>
Scalar max_relative_error(const MatrixX<Scalar>& analytic, const MatrixX<Scalar>& numeric) {
  detail::require_same_shape("max_relative_error", analytic, numeric);
  Scalar worst = 0;
  for (Index i = 0; i < analytic.rows(); ++i) {
    for (Index j = 0; j < analytic.cols(); ++j) {
      const Scalar a = analytic(i, j);
      const Scalar n = numeric(i, j);
      const Scalar denom = std::max(Scalar(1e-8), std::abs(a) + std::abs(n));
      worst = std::max(worst, std::abs(a - n) / denom);
    }
  }
  return worst;
}

/// Builds a scalar (1x1) on the tape from one var per parameter.
template <typename Scalar>
using TapeObjective = std::function<Var(BasicTape<Scalar>&, const std::vector<Var>&)>;

template <typename Scalar>
struct GradCheckReport {
  Scalar max_rel_error = 0;
  std::vector<MatrixX<Scalar>> analytic;
  std::vector<MatrixX<Scalar>> numeric;
};

/// Compares tape gradients of `f` against central differences, coordinate by
/// coordinate, over every parameter.
template <typename Scalar>
GradCheckReport<Scalar> finite_difference_check(const TapeObjective<Scalar>& f,
                                                const std::vector<MatrixX<Scalar>>& params,
                                                Scalar eps) {
  auto evaluate = [&](const std::vector<MatrixX<Scalar>>& ps) {
    BasicTape<Scalar> tape;
    std::vector<Var> vars;
    vars.reserve(ps.size());
    for (const auto& p : ps) vars.push_back(tape.constant(p));
    const auto& out = tape.value(f(tape, vars));
    if (out.size() != 1) throw ShapeError("finite_difference_check: objective must be 1x1");
    const Scalar v = out(0, 0);
    if (!std::isfinite(v)) throw EvaluationError("finite_difference_check: non-finite objective");
    return v;
  };

  GradCheckReport<Scalar> report;
  {
    BasicTape<Scalar> tape;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(tape.leaf(p));
    Var root = f(tape, vars);
    if (!std::isfinite(tape.value(root)(0, 0))) {
      throw EvaluationError("finite_difference_check: non-finite objective");
    }
    tape.backward(root);
    for (Var v : vars) report.analytic.push_back(tape.grad(v));
  }

  std::vector<MatrixX<Scalar>> work = params;
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::function<Scalar(const MatrixX<Scalar>&)> fk = [&](const MatrixX<Scalar>& x) {
      work[k] = x;
      return evaluate(work);
    };
    report.numeric.push_back(central_difference<Scalar>(fk, params[k], eps));
    work[k] = params[k];
    report.max_rel_error =
        std::max(report.max_rel_error, max_relative_error(report.analytic[k], report.numeric[k]));
  }
  return report;
}

}  // namespace himap
