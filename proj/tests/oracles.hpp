#pragma once

// Independent reference implementations used only by tests. These must stay
// decoupled from the library kernels they check.

#include <random>

#include "asl/tensor.hpp"

namespace asl::testing {

/// Triple-loop matrix product reference.
template <typename Scalar>
Mat<Scalar> gemm_reference(const Mat<Scalar>& a, const Mat<Scalar>& b) {
  Mat<Scalar> y = Mat<Scalar>::Zero(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.cols(); ++j) {
      Scalar acc = 0;
      for (Index k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      y(i, j) = acc;
    }
  return y;
}

template <typename Scalar, typename Rng>
Mat<Scalar> random_matrix(Index rows, Index cols, Rng& rng, double lo = -1.0,
                          double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Mat<Scalar> m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = Scalar(dist(rng));
  return m;
}

/// Relative error with a floor that keeps near-zero pairs from blowing up.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), floor);
}

}  // namespace asl::testing
