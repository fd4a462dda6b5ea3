#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <string>

#include "octcoda/error.hpp"

namespace octcoda {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = Mat<double>;
using RowVector = RowVec<double>;
using Vector = Eigen::VectorXd;

/// Rows of B×N cosine scores between a batch of embeddings and the concept axis.
using SimilarityMatrix = Matrix;

inline constexpr double kNormEps = 1e-12;

template <typename Derived>
std::string shape_of(const Eigen::MatrixBase<Derived>& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

template <typename DA, typename DB>
void require_same_shape(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                        const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(what) + ": shape mismatch " + shape_of(a) + " vs " + shape_of(b));
  }
}

template <typename DA, typename DB>
auto matmul(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  using Scalar = typename DA::Scalar;
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::DimensionMismatch,
                "matmul: cannot multiply " + shape_of(a) + " by " + shape_of(b));
  }
  Mat<Scalar> out = a * b;
  return out;
}

/// Divides each row by max(||row||, eps); zero rows stay zero.
template <typename Derived>
auto l2_normalize_rows(const Eigen::MatrixBase<Derived>& m,
                       typename Derived::Scalar eps = kNormEps) {
  using Scalar = typename Derived::Scalar;
  Mat<Scalar> out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const Scalar n = m.row(r).norm();
    out.row(r) = m.row(r) / (n > eps ? n : eps);
  }
  return out;
}

/// Row-wise softmax with max subtraction.
template <typename Derived>
auto softmax_rows(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  Mat<Scalar> out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const Scalar mx = m.row(r).maxCoeff();
    out.row(r) = (m.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

/// Shape-checked exact equality.
template <typename DA, typename DB>
bool identical(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

/// Index of the largest entry; ties resolve to the lowest index.
template <typename Derived>
Eigen::Index argmax_row(const Eigen::MatrixBase<Derived>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < row.size(); ++c) {
    if (row(c) > row(best)) best = c;
  }
  return best;
}

}  // namespace octcoda
