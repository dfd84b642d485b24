#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "himap/errors.hpp"
#include "himap/numerics/kernels.hpp"

namespace himap {

/// Handle to a value recorded on a tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape. Every op appends a node holding its forward value and a
/// closure that pushes the node's gradient onto its inputs. `backward` walks
/// the nodes in exact reverse recording order and may run only once.
template <typename Scalar>
class BasicTape {
 public:
  using Mat = MatrixX<Scalar>;
  using Row = RowVectorX<Scalar>;

  /// A differentiable input. Named leaves are looked up with `grad(name)`.
  Var leaf(Mat value, std::string name = {}) {
    Var v = push(std::move(value), true, {});
    if (!name.empty()) registry_[std::move(name)] = v.id;
    return v;
  }

  Var constant(Mat value) { return push(std::move(value), false, {}); }

  const Mat& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  /// Gradient of the backward root w.r.t. `v`; zeros if nothing reached it.
  Mat grad(Var v) const {
    if (!backward_done_) throw StateError("tape: gradients requested before backward");
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  Mat grad(const std::string& name) const {
    auto it = registry_.find(name);
    if (it == registry_.end()) throw StateError("tape: unknown leaf '" + name + "'");
    return grad(Var{it->second});
  }

  std::optional<Var> find_leaf(const std::string& name) const {
    auto it = registry_.find(name);
    if (it == registry_.end()) return std::nullopt;
    return Var{it->second};
  }

  Var matmul(Var a, Var b) {
    Mat out = himap::matmul(value(a), value(b));
    return push(std::move(out), any_grad({a, b}), [a, b](BasicTape& t, const Mat& g) {
      if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
      if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
    });
  }

  // a * b^T
  Var matmul_transposed(Var a, Var b) {
    if (value(a).cols() != value(b).cols()) {
      throw ShapeError("matmul_transposed: " + detail::shape_str(value(a)) + " x (" +
                       detail::shape_str(value(b)) + ")^T");
    }
    Mat out = value(a) * value(b).transpose();
    return push(std::move(out), any_grad({a, b}), [a, b](BasicTape& t, const Mat& g) {
      if (t.requires_grad(a)) t.accumulate(a, g * t.value(b));
      if (t.requires_grad(b)) t.accumulate(b, g.transpose() * t.value(a));
    });
  }

  Var add(Var a, Var b) {
    detail::require_same_shape("add", value(a), value(b));
    Mat out = value(a) + value(b);
    return push(std::move(out), any_grad({a, b}), [a, b](BasicTape& t, const Mat& g) {
      if (t.requires_grad(a)) t.accumulate(a, g);
      if (t.requires_grad(b)) t.accumulate(b, g);
    });
  }

  Var scale(Var a, Scalar s) {
    Mat out = value(a) * s;
    return push(std::move(out), any_grad({a}), [a, s](BasicTape& t, const Mat& g) {
      t.accumulate(a, g * s);
    });
  }

  Var cols(Var a, Index start, Index count) {
    const Mat& av = value(a);
    if (start < 0 || count < 0 || start + count > av.cols()) {
      throw ShapeError("cols: [" + std::to_string(start) + ", +" + std::to_string(count) +
                       ") outside " + detail::shape_str(av));
    }
    Mat out = av.middleCols(start, count);
    return push(std::move(out), any_grad({a}), [a, start, count](BasicTape& t, const Mat& g) {
      Mat full = Mat::Zero(t.value(a).rows(), t.value(a).cols());
      full.middleCols(start, count) = g;
      t.accumulate(a, full);
    });
  }

  Var hcat(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("hcat: no inputs");
    const Index rows = value(parts.front()).rows();
    Index total = 0;
    for (Var p : parts) {
      if (value(p).rows() != rows) throw ShapeError("hcat: row count mismatch");
      total += value(p).cols();
    }
    Mat out(rows, total);
    Index at = 0;
    for (Var p : parts) {
      out.middleCols(at, value(p).cols()) = value(p);
      at += value(p).cols();
    }
    return push(std::move(out), any_grad(parts), [parts](BasicTape& t, const Mat& g) {
      Index off = 0;
      for (Var p : parts) {
        const Index w = t.value(p).cols();
        if (t.requires_grad(p)) t.accumulate(p, g.middleCols(off, w));
        off += w;
      }
    });
  }

  Var block(Var a, Index row, Index col, Index rows, Index count) {
    const Mat& av = value(a);
    if (row < 0 || col < 0 || rows < 0 || count < 0 || row + rows > av.rows() ||
        col + count > av.cols()) {
      throw ShapeError("block: (" + std::to_string(row) + ", " + std::to_string(col) + ") +" +
                       std::to_string(rows) + "x" + std::to_string(count) + " outside " +
                       detail::shape_str(av));
    }
    Mat out = av.block(row, col, rows, count);
    return push(std::move(out), any_grad({a}), [a, row, col](BasicTape& t, const Mat& g) {
      t.accumulate_block(a, row, col, g);
    });
  }

  Var vcat(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("vcat: no inputs");
    const Index cols = value(parts.front()).cols();
    Index total = 0;
    for (Var p : parts) {
      if (value(p).cols() != cols) throw ShapeError("vcat: column count mismatch");
      total += value(p).rows();
    }
    Mat out(total, cols);
    Index at = 0;
    for (Var p : parts) {
      out.middleRows(at, value(p).rows()) = value(p);
      at += value(p).rows();
    }
    return push(std::move(out), any_grad(parts), [parts](BasicTape& t, const Mat& g) {
      Index off = 0;
      for (Var p : parts) {
        const Index h = t.value(p).rows();
        if (t.requires_grad(p)) t.accumulate(p, g.middleRows(off, h));
        off += h;
      }
    });
  }

  /// out.row(k) = a.row(rows[k]); repeated rows accumulate on backward.
  Var gather_rows(Var a, std::vector<Index> rows) {
    const Mat& av = value(a);
    Mat out(static_cast<Index>(rows.size()), av.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (rows[k] < 0 || rows[k] >= av.rows()) {
        throw IndexError("gather_rows: row " + std::to_string(rows[k]) + " outside " +
                         detail::shape_str(av));
      }
      out.row(static_cast<Index>(k)) = av.row(rows[k]);
    }
    return push(std::move(out), any_grad({a}),
                [a, rows = std::move(rows)](BasicTape& t, const Mat& g) {
                  Mat full = Mat::Zero(t.value(a).rows(), t.value(a).cols());
                  for (std::size_t k = 0; k < rows.size(); ++k) {
                    full.row(rows[k]) += g.row(static_cast<Index>(k));
                  }
                  t.accumulate(a, full);
                });
  }

  Var masked_softmax(Var a, MaskX allowed) {
    Mat out = masked_row_softmax(value(a), allowed);
    const std::size_t self = nodes_.size();
    return push(std::move(out), any_grad({a}),
                [a, self, allowed = std::move(allowed)](BasicTape& t, const Mat& g) {
                  t.accumulate(a, masked_row_softmax_backward(t.nodes_[self].value, allowed, g));
                });
  }

  /// Sets entries where `zeroed` is true to exactly 0; others pass through.
  Var zero_entries(Var a, MaskX zeroed) {
    if (zeroed.rows() != value(a).rows() || zeroed.cols() != value(a).cols()) {
      throw ShapeError("zero_entries: mask shape differs from " + detail::shape_str(value(a)));
    }
    Mat out = value(a);
    for (Index i = 0; i < out.rows(); ++i) {
      for (Index j = 0; j < out.cols(); ++j) {
        if (zeroed(i, j)) out(i, j) = Scalar(0);
      }
    }
    return push(std::move(out), any_grad({a}),
                [a, zeroed = std::move(zeroed)](BasicTape& t, const Mat& g) {
                  Mat gx = g;
                  for (Index i = 0; i < gx.rows(); ++i) {
                    for (Index j = 0; j < gx.cols(); ++j) {
                      if (zeroed(i, j)) gx(i, j) = Scalar(0);
                    }
                  }
                  t.accumulate(a, gx);
                });
  }

  /// `gain` and `bias` are 1 x d vars.
  Var layer_norm(Var x, Var gain, Var bias, Scalar eps) {
    auto cache = std::make_shared<LayerNormCache<Scalar>>();
    Mat out = himap::layer_norm<Scalar>(value(x), Row(value(gain)), Row(value(bias)), eps,
                                        cache.get());
    return push(std::move(out), any_grad({x, gain, bias}),
                [x, gain, bias, cache](BasicTape& t, const Mat& g) {
                  auto grads = layer_norm_backward<Scalar>(*cache, Row(t.value(gain)), g);
                  if (t.requires_grad(x)) t.accumulate(x, grads.x);
                  if (t.requires_grad(gain)) t.accumulate(gain, grads.gain);
                  if (t.requires_grad(bias)) t.accumulate(bias, grads.bias);
                });
  }

  Var gelu(Var x) {
    Mat out = himap::gelu<Scalar>(value(x));
    return push(std::move(out), any_grad({x}), [x](BasicTape& t, const Mat& g) {
      t.accumulate(x, gelu_backward<Scalar>(t.value(x), g));
    });
  }

  /// Cross-entropy of row `row` of `logits` against `target`; yields a 1x1 var.
  Var cross_entropy(Var logits, Index row, Index target) {
    const Mat& lv = value(logits);
    if (row < 0 || row >= lv.rows()) {
      throw IndexError("cross_entropy: row " + std::to_string(row) + " outside " +
                       detail::shape_str(lv));
    }
    Row r = lv.row(row);
    Mat out(1, 1);
    out(0, 0) = himap::cross_entropy<Scalar>(r, target);
    return push(std::move(out), any_grad({logits}),
                [logits, row, target](BasicTape& t, const Mat& g) {
                  const Mat& l = t.value(logits);
                  Mat full = Mat::Zero(l.rows(), l.cols());
                  full.row(row) = cross_entropy_backward<Scalar>(Row(l.row(row)), target) * g(0, 0);
                  t.accumulate(logits, full);
                });
  }

  /// Sum of all entries, as 1x1.
  Var sum(Var a) {
    Mat out(1, 1);
    out(0, 0) = value(a).sum();
    return push(std::move(out), any_grad({a}), [a](BasicTape& t, const Mat& g) {
      t.accumulate(a, Mat::Constant(t.value(a).rows(), t.value(a).cols(), g(0, 0)));
    });
  }

  /// Reverse sweep from a 1x1 root.
  void backward(Var root) {
    if (backward_done_) throw StateError("tape: backward already ran on this tape");
    const Mat& rv = value(root);
    if (rv.rows() != 1 || rv.cols() != 1) {
      throw ShapeError("backward: root must be 1x1, got " + detail::shape_str(rv));
    }
    backward_done_ = true;
    nodes_[root.id].grad = Mat::Ones(1, 1);
    for (std::size_t k = root.id + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

 private:
  using BackwardFn = std::function<void(BasicTape&, const Mat&)>;

  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Mat value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Mat{}, requires_grad,
                          requires_grad ? std::move(fn) : BackwardFn{}});
    return Var{nodes_.size() - 1};
  }

  bool any_grad(std::initializer_list<Var> vs) const {
    for (Var v : vs) {
      if (nodes_[v.id].requires_grad) return true;
    }
    return false;
  }
  bool any_grad(const std::vector<Var>& vs) const {
    for (Var v : vs) {
      if (nodes_[v.id].requires_grad) return true;
    }
    return false;
  }

  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  void accumulate_block(Var v, Index row, Index col, const Mat& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.grad.block(row, col, g.rows(), g.cols()) += g;
  }

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> registry_;
  bool backward_done_ = false;
};

using GradTape = BasicTape<double>;

}  // namespace himap
