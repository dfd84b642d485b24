#pragma once

// Forward kernels and their vector-Jacobian products. The tape calls these,
// and so does the cache-backed decode path, so both share arithmetic order.

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

#include "himap/errors.hpp"
#include "himap/numerics/types.hpp"

namespace himap {

namespace detail {

template <typename Derived>
std::string shape_str(const Eigen::MatrixBase<Derived>& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

template <typename A, typename B>
void require_same_shape(const char* op, const Eigen::MatrixBase<A>& a,
                        const Eigen::MatrixBase<B>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

}  // namespace detail

template <typename A, typename B>
auto matmul(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b)
    -> MatrixX<typename A::Scalar> {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree for " + detail::shape_str(a) + " x " +
                     detail::shape_str(b));
  }
  MatrixX<typename A::Scalar> out = a * b;
  return out;
}

/// Row-wise softmax restricted to `allowed` entries. Disallowed entries are
/// outside the softmax domain and come out as exact zeros.
template <typename Scalar>
MatrixX<Scalar> masked_row_softmax(const MatrixX<Scalar>& scores, const MaskX& allowed) {
  if (scores.rows() != allowed.rows() || scores.cols() != allowed.cols()) {
    throw ShapeError("masked_row_softmax: scores " + detail::shape_str(scores) + " vs mask " +
                     std::to_string(allowed.rows()) + "x" + std::to_string(allowed.cols()));
  }
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(scores.rows(), scores.cols());
  for (Index i = 0; i < scores.rows(); ++i) {
    Scalar row_max = -std::numeric_limits<Scalar>::infinity();
    bool any = false;
    for (Index j = 0; j < scores.cols(); ++j) {
      if (allowed(i, j)) {
        row_max = any ? std::max(row_max, scores(i, j)) : scores(i, j);
        any = true;
      }
    }
    if (!any) throw DegenerateRowError(static_cast<std::size_t>(i));
    Scalar total = 0;
    for (Index j = 0; j < scores.cols(); ++j) {
      if (allowed(i, j)) {
        out(i, j) = std::exp(scores(i, j) - row_max);
        total += out(i, j);
      }
    }
    for (Index j = 0; j < scores.cols(); ++j) {
      if (allowed(i, j)) out(i, j) /= total;
    }
  }
  return out;
}

// dL/dscores given y = softmax(scores) and dL/dy.
template <typename Scalar>
MatrixX<Scalar> masked_row_softmax_backward(const MatrixX<Scalar>& y, const MaskX& allowed,
                                            const MatrixX<Scalar>& grad_y) {
  MatrixX<Scalar> gx = MatrixX<Scalar>::Zero(y.rows(), y.cols());
  for (Index i = 0; i < y.rows(); ++i) {
    Scalar dot = 0;
    for (Index j = 0; j < y.cols(); ++j) {
      if (allowed(i, j)) dot += y(i, j) * grad_y(i, j);
    }
    for (Index j = 0; j < y.cols(); ++j) {
      if (allowed(i, j)) gx(i, j) = y(i, j) * (grad_y(i, j) - dot);
    }
  }
  return gx;
}

/// Lower-triangular (causal) mask of size n x n.
inline MaskX causal_mask(Index n) {
  MaskX m = MaskX::Constant(n, n, false);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j <= i; ++j) m(i, j) = true;
  }
  return m;
}

template <typename Scalar>
struct LayerNormCache {
  MatrixX<Scalar> normalized;  // (x - mean) * rstd
  VectorX<Scalar> rstd;
};

template <typename Scalar>
MatrixX<Scalar> layer_norm(const MatrixX<Scalar>& x, const RowVectorX<Scalar>& gain,
                           const RowVectorX<Scalar>& bias, Scalar eps,
                           LayerNormCache<Scalar>* cache = nullptr) {
  if (gain.size() != x.cols() || bias.size() != x.cols()) {
    throw ShapeError("layer_norm: gain/bias length " + std::to_string(gain.size()) + "/" +
                     std::to_string(bias.size()) + " vs width " + std::to_string(x.cols()));
  }
  if (x.cols() < 1 || !(eps > 0)) throw ShapeError("layer_norm: requires d >= 1 and eps > 0");
  const Index n = x.rows();
  const Index d = x.cols();
  MatrixX<Scalar> xhat(n, d);
  VectorX<Scalar> rstd(n);
  for (Index i = 0; i < n; ++i) {
    const Scalar mean = x.row(i).sum() / static_cast<Scalar>(d);
    Scalar var = 0;
    for (Index j = 0; j < d; ++j) {
      const Scalar c = x(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<Scalar>(d);
    rstd(i) = Scalar(1) / std::sqrt(var + eps);
    for (Index j = 0; j < d; ++j) xhat(i, j) = (x(i, j) - mean) * rstd(i);
  }
  MatrixX<Scalar> y(n, d);
  for (Index i = 0; i < n; ++i) {
    y.row(i) = xhat.row(i).cwiseProduct(gain) + bias;
  }
  if (cache != nullptr) {
    cache->normalized = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename Scalar>
struct LayerNormGrads {
  MatrixX<Scalar> x;
  RowVectorX<Scalar> gain;
  RowVectorX<Scalar> bias;
};

template <typename Scalar>
LayerNormGrads<Scalar> layer_norm_backward(const LayerNormCache<Scalar>& cache,
                                           const RowVectorX<Scalar>& gain,
                                           const MatrixX<Scalar>& grad_y) {
  const Index n = grad_y.rows();
  const Index d = grad_y.cols();
  LayerNormGrads<Scalar> g;
  g.x.resize(n, d);
  g.gain = RowVectorX<Scalar>::Zero(d);
  g.bias = RowVectorX<Scalar>::Zero(d);
  for (Index i = 0; i < n; ++i) {
    RowVectorX<Scalar> dxhat = grad_y.row(i).cwiseProduct(gain);
    const Scalar mean_dxhat = dxhat.sum() / static_cast<Scalar>(d);
    const Scalar mean_dxhat_xhat = dxhat.dot(cache.normalized.row(i)) / static_cast<Scalar>(d);
    g.x.row(i) = (dxhat.array() - mean_dxhat -
                  cache.normalized.row(i).array() * mean_dxhat_xhat) *
                 cache.rstd(i);
    g.gain += grad_y.row(i).cwiseProduct(cache.normalized.row(i));
    g.bias += grad_y.row(i);
  }
  return g;
}

// tanh approximation
template <typename Scalar>
Scalar gelu_scalar(Scalar x) {
  const Scalar k = std::sqrt(Scalar(2) / std::numbers::pi_v<Scalar>);
  return Scalar(0.5) * x * (Scalar(1) + std::tanh(k * (x + Scalar(0.044715) * x * x * x)));
}

template <typename Scalar>
Scalar gelu_derivative_scalar(Scalar x) {
  const Scalar k = std::sqrt(Scalar(2) / std::numbers::pi_v<Scalar>);
  const Scalar inner = k * (x + Scalar(0.044715) * x * x * x);
  const Scalar t = std::tanh(inner);
  const Scalar dinner = k * (Scalar(1) + Scalar(3) * Scalar(0.044715) * x * x);
  return Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * x * (Scalar(1) - t * t) * dinner;
}

template <typename Scalar>
MatrixX<Scalar> gelu(const MatrixX<Scalar>& x) {
  return x.unaryExpr([](Scalar v) { return gelu_scalar(v); });
}

template <typename Scalar>
MatrixX<Scalar> gelu_backward(const MatrixX<Scalar>& x, const MatrixX<Scalar>& grad_y) {
  return x.unaryExpr([](Scalar v) { return gelu_derivative_scalar(v); }).cwiseProduct(grad_y);
}

template <typename Scalar>
Scalar log_sum_exp(const RowVectorX<Scalar>& logits) {
  const Scalar m = logits.maxCoeff();
  if (std::isinf(m)) return m;
  return m + std::log((logits.array() - m).exp().sum());
}

template <typename Scalar>
RowVectorX<Scalar> softmax(const RowVectorX<Scalar>& logits) {
  const Scalar m = logits.maxCoeff();
  RowVectorX<Scalar> e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

/// -log softmax(logits)[target].
template <typename Scalar>
Scalar cross_entropy(const RowVectorX<Scalar>& logits, Index target) {
  if (target < 0 || target >= logits.size()) {
    throw IndexError("cross_entropy: target " + std::to_string(target) + " outside vocab of " +
                     std::to_string(logits.size()));
  }
  const Scalar m = logits.maxCoeff();
  if (std::isinf(m) && m > 0) {
    // A +inf logit dominates: the loss is 0 when it is the target.
    return logits(target) == m ? Scalar(0) : std::numeric_limits<Scalar>::infinity();
  }
  return log_sum_exp(logits) - logits(target);
}

template <typename Scalar>
RowVectorX<Scalar> cross_entropy_backward(const RowVectorX<Scalar>& logits, Index target) {
  RowVectorX<Scalar> g = softmax(logits);
  g(target) -= Scalar(1);
  return g;
}

}  // namespace himap
