#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation applied to its Vars in creation order, so the
// node list is already topologically sorted. backward() zeroes all adjoints,
// seeds the 1x1 loss node with 1 and sweeps the list in reverse. Only nodes
// that depend on a tracked leaf carry a backward rule.
//
// Tapes are rebuilt for every forward pass; nothing is reused between steps.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "octcoda/numerics.hpp"

namespace octcoda {

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  std::size_t id = 0;

  const Mat<Scalar>& value() const { return tape->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool tracked() const { return tape->tracked(*this); }
};

template <typename Scalar>
class Tape {
 public:
  using MatrixType = Mat<Scalar>;
  /// Receives the node's own adjoint and pushes contributions into its inputs.
  using BackwardFn = std::function<void(Tape&, const MatrixType& adjoint)>;

  Var<Scalar> variable(MatrixType value) { return push(std::move(value), true, nullptr); }
  Var<Scalar> constant(MatrixType value) { return push(std::move(value), false, nullptr); }

  /// Appends a derived node. `tracked` should be true iff any input is tracked;
  /// untracked nodes drop their backward rule.
  Var<Scalar> push(MatrixType value, bool tracked, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), MatrixType(), tracked,
                          tracked ? std::move(backward) : BackwardFn()});
    return Var<Scalar>{this, nodes_.size() - 1};
  }

  const MatrixType& value(Var<Scalar> v) const { return nodes_.at(v.id).value; }
  bool tracked(Var<Scalar> v) const { return nodes_.at(v.id).tracked; }

  /// Adjoint of `v` from the most recent backward(); zero-sized if untracked.
  const MatrixType& grad(Var<Scalar> v) const { return nodes_.at(v.id).adjoint; }

  /// Adds `contribution` to the adjoint of `v` if it is tracked.
  template <typename Derived>
  void accumulate(Var<Scalar> v, const Eigen::MatrixBase<Derived>& contribution) {
    Node& n = nodes_[v.id];
    if (n.tracked) n.adjoint += contribution;
  }

  void backward(Var<Scalar> loss) {
    const MatrixType& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw Error(ErrorCode::NonScalarLoss,
                  "backward: loss node must be 1x1, got " + shape_of(lv));
    }
    for (Node& n : nodes_) {
      if (n.tracked) {
        n.adjoint = MatrixType::Zero(n.value.rows(), n.value.cols());
      } else {
        n.adjoint.resize(0, 0);
      }
    }
    if (!nodes_[loss.id].tracked) return;
    nodes_[loss.id].adjoint(0, 0) = Scalar(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.tracked && n.backward) {
        // Rules only touch adjoints of earlier nodes, so n.adjoint is final here.
        n.backward(*this, n.adjoint);
      }
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    MatrixType value;
    MatrixType adjoint;
    bool tracked;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable primitives. Every function takes Vars from the same tape.

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> out = octcoda::matmul(a.value(), b.value());
  return t.push(std::move(out), a.tracked() || b.tracked(),
                [a, b](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                  if (a.tracked()) tp.accumulate(a, g * b.value().transpose());
                  if (b.tracked()) tp.accumulate(b, a.value().transpose() * g);
                });
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  Mat<Scalar> out = a.value().transpose();
  return a.tape->push(std::move(out), a.tracked(),
                      [a](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                        tp.accumulate(a, g.transpose());
                      });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  require_same_shape(a.value(), b.value(), "add");
  Mat<Scalar> out = a.value() + b.value();
  return a.tape->push(std::move(out), a.tracked() || b.tracked(),
                      [a, b](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                        tp.accumulate(a, g);
                        tp.accumulate(b, g);
                      });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  require_same_shape(a.value(), b.value(), "sub");
  Mat<Scalar> out = a.value() - b.value();
  return a.tape->push(std::move(out), a.tracked() || b.tracked(),
                      [a, b](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                        tp.accumulate(a, g);
                        tp.accumulate(b, -g);
                      });
}

/// m (B×K) plus a 1×K row broadcast over every row.
template <typename Scalar>
Var<Scalar> add_row(Var<Scalar> m, Var<Scalar> row) {
  if (row.rows() != 1 || row.cols() != m.cols()) {
    throw Error(ErrorCode::DimensionMismatch,
                "add_row: cannot broadcast " + shape_of(row.value()) + " over " +
                    shape_of(m.value()));
  }
  Mat<Scalar> out = m.value().rowwise() + row.value().row(0);
  return m.tape->push(std::move(out), m.tracked() || row.tracked(),
                      [m, row](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                        tp.accumulate(m, g);
                        tp.accumulate(row, g.colwise().sum());
                      });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar k) {
  Mat<Scalar> out = a.value() * k;
  return a.tape->push(std::move(out), a.tracked(),
                      [a, k](Tape<Scalar>& tp, const Mat<Scalar>& g) { tp.accumulate(a, g * k); });
}

template <typename Scalar>
Var<Scalar> hadamard(Var<Scalar> a, Var<Scalar> b) {
  require_same_shape(a.value(), b.value(), "hadamard");
  Mat<Scalar> out = a.value().cwiseProduct(b.value());
  return a.tape->push(std::move(out), a.tracked() || b.tracked(),
                      [a, b](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                        if (a.tracked()) tp.accumulate(a, g.cwiseProduct(b.value()));
                        if (b.tracked()) tp.accumulate(b, g.cwiseProduct(a.value()));
                      });
}

template <typename Scalar>
Var<Scalar> tanh(Var<Scalar> a) {
  Mat<Scalar> out = a.value().array().tanh().matrix();
  Tape<Scalar>& t = *a.tape;
  const Var<Scalar> self{&t, t.size()};
  return t.push(std::move(out), a.tracked(),
                [a, self](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                  const auto& y = self.value().array();
                  tp.accumulate(a, (g.array() * (Scalar(1) - y * y)).matrix());
                });
}

/// 1×1 sum of all entries.
template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  Mat<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->push(std::move(out), a.tracked(),
                      [a](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                        tp.accumulate(a, Mat<Scalar>::Constant(a.rows(), a.cols(), g(0, 0)));
                      });
}

/// Stacks the rows of `top` above the rows of `bottom`.
template <typename Scalar>
Var<Scalar> vstack(Var<Scalar> top, Var<Scalar> bottom) {
  if (top.cols() != bottom.cols()) {
    throw Error(ErrorCode::DimensionMismatch,
                "vstack: column mismatch " + shape_of(top.value()) + " vs " +
                    shape_of(bottom.value()));
  }
  Mat<Scalar> out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top.value();
  out.bottomRows(bottom.rows()) = bottom.value();
  const Eigen::Index split = top.rows();
  return top.tape->push(std::move(out), top.tracked() || bottom.tracked(),
                        [top, bottom, split](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                          tp.accumulate(top, g.topRows(split));
                          tp.accumulate(bottom, g.bottomRows(g.rows() - split));
                        });
}

template <typename Scalar>
Var<Scalar> l2_normalize_rows(Var<Scalar> a, Scalar eps = Scalar(kNormEps)) {
  Tape<Scalar>& t = *a.tape;
  const Mat<Scalar>& x = a.value();
  Mat<Scalar> out(x.rows(), x.cols());
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> denom(x.rows());
  std::vector<bool> clamped(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar n = x.row(r).norm();
    clamped[static_cast<std::size_t>(r)] = !(n > eps);
    denom(r) = n > eps ? n : eps;
    out.row(r) = x.row(r) / denom(r);
  }
  const Var<Scalar> self{&t, t.size()};
  return t.push(std::move(out), a.tracked(),
                [a, self, denom, clamped](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                  const Mat<Scalar>& y = self.value();
                  Mat<Scalar> dx(y.rows(), y.cols());
                  for (Eigen::Index r = 0; r < y.rows(); ++r) {
                    if (clamped[static_cast<std::size_t>(r)]) {
                      dx.row(r) = g.row(r) / denom(r);
                    } else {
                      const Scalar proj = y.row(r).dot(g.row(r));
                      dx.row(r) = (g.row(r) - proj * y.row(r)) / denom(r);
                    }
                  }
                  tp.accumulate(a, dx);
                });
}

template <typename Scalar>
Var<Scalar> softmax_rows(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> out = octcoda::softmax_rows(a.value());
  const Var<Scalar> self{&t, t.size()};
  return t.push(std::move(out), a.tracked(),
                [a, self](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                  const Mat<Scalar>& y = self.value();
                  Mat<Scalar> dx(y.rows(), y.cols());
                  for (Eigen::Index r = 0; r < y.rows(); ++r) {
                    const Scalar inner = y.row(r).dot(g.row(r));
                    dx.row(r) = (y.row(r).array() * (g.row(r).array() - inner)).matrix();
                  }
                  tp.accumulate(a, dx);
                });
}

/// Mean over rows of -log(max(p[row, label], eps)); returns 1×1.
template <typename Scalar>
Var<Scalar> cross_entropy(Var<Scalar> probs, std::span<const int> labels,
                          Scalar eps = Scalar(1e-12)) {
  const Mat<Scalar>& p = probs.value();
  if (static_cast<Eigen::Index>(labels.size()) != p.rows()) {
    throw Error(ErrorCode::DimensionMismatch,
                "cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(p.rows()) + " rows");
  }
  if (p.rows() == 0) {
    throw Error(ErrorCode::InvalidArgument, "cross_entropy: empty batch");
  }
  Scalar total = 0;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= p.cols()) {
      throw Error(ErrorCode::LabelOutOfRange,
                  "cross_entropy: label " + std::to_string(y) + " outside [0, " +
                      std::to_string(p.cols()) + ")");
    }
    total -= std::log(std::max(p(r, y), eps));
  }
  const Scalar batch = static_cast<Scalar>(p.rows());
  Mat<Scalar> out(1, 1);
  out(0, 0) = total / batch;
  std::vector<int> ys(labels.begin(), labels.end());
  return probs.tape->push(std::move(out), probs.tracked(),
                          [probs, ys, eps, batch](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                            const Mat<Scalar>& pv = probs.value();
                            Mat<Scalar> dp = Mat<Scalar>::Zero(pv.rows(), pv.cols());
                            for (Eigen::Index r = 0; r < pv.rows(); ++r) {
                              const int y = ys[static_cast<std::size_t>(r)];
                              if (pv(r, y) > eps) dp(r, y) = -g(0, 0) / (batch * pv(r, y));
                            }
                            tp.accumulate(probs, dp);
                          });
}

}  // namespace octcoda
