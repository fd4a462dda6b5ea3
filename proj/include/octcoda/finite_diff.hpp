#pragma once

// Central-difference gradient oracle. Test code uses it to check the tape.

#include <functional>

#include "octcoda/numerics.hpp"

namespace octcoda {

template <typename Scalar, typename F>
Mat<Scalar> finite_diff_grad(F&& f, const Mat<Scalar>& x, Scalar h) {
  if (!(h > Scalar(0))) {
    throw Error(ErrorCode::InvalidArgument, "finite_diff_grad: step must be positive");
  }
  Mat<Scalar> grad(x.rows(), x.cols());
  Mat<Scalar> probe = x;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const Scalar orig = probe(r, c);
      probe(r, c) = orig + h;
      const Scalar up = f(static_cast<const Mat<Scalar>&>(probe));
      probe(r, c) = orig - h;
      const Scalar down = f(static_cast<const Mat<Scalar>&>(probe));
      probe(r, c) = orig;
      grad(r, c) = (up - down) / (Scalar(2) * h);
    }
  }
  return grad;
}

/// max |a-b| / max(1, max|b|): relative to the gradient's scale, absolute near zero.
template <typename Scalar>
Scalar relative_error(const Mat<Scalar>& a, const Mat<Scalar>& b) {
  require_same_shape(a, b, "relative_error");
  if (a.size() == 0) return Scalar(0);
  const Scalar scale = std::max(Scalar(1), b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace octcoda
