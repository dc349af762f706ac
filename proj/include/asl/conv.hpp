#pragma once

#include <cstdint>
#include <vector>

#include "asl/parallel.hpp"
#include "asl/tensor.hpp"

namespace asl {

/// Kernel geometry. `kernel` is the flattened spatial size K (1 for pointwise,
/// 9 for 3x3); square kernels only.
struct ConvSpec {
  Index out_channels = 0;  // D
  Index in_channels = 0;   // C
  Index kernel = 1;        // K
  Index stride = 1;
  Index pad = 0;

  Index kernel_side() const {
    const Index side = static_cast<Index>(std::lround(std::sqrt(double(kernel))));
    if (side * side != kernel)
      throw ConfigError("ConvSpec: kernel size " + std::to_string(kernel) +
                        " is not a perfect square");
    return side;
  }

  Index out_dim(Index in) const {
    const Index side = kernel_side();
    const Index num = in + 2 * pad - side;
    if (num < 0)
      throw ShapeError("ConvSpec: kernel side " + std::to_string(side) +
                       " exceeds padded input extent " + std::to_string(in + 2 * pad));
    return num / stride + 1;
  }
};

/// Displacement of kernel tap k (1-based, top-left to bottom-right) relative
/// to the kernel centre.
struct KernelOffset {
  Index k = 1;
  Index row = 0;  // i_k
  Index col = 0;  // j_k
};

inline std::vector<KernelOffset> kernel_offsets(Index kernel) {
  const Index side = static_cast<Index>(std::lround(std::sqrt(double(kernel))));
  if (side * side != kernel)
    throw ConfigError("kernel_offsets: kernel size " + std::to_string(kernel) +
                      " is not a perfect square");
  const Index half = (side - 1) / 2;
  std::vector<KernelOffset> offsets;
  offsets.reserve(kernel);
  for (Index k = 1; k <= kernel; ++k) {
    offsets.push_back({k, (k - 1) / side - half, (k - 1) % side - half});
  }
  return offsets;
}

/// Dense product with a fixed, Eigen-internal accumulation order; a given
/// build produces bit-identical results run to run.
template <typename Scalar>
Mat<Scalar> gemm(const Mat<Scalar>& a, const Mat<Scalar>& b) {
  if (a.cols() != b.rows()) {
    std::ostringstream os;
    os << "gemm: inner dimensions disagree, " << a.rows() << "x" << a.cols()
       << " vs " << b.rows() << "x" << b.cols();
    throw ShapeError(os.str());
  }
  return a * b;
}

/// Reference convolution: a direct nested-loop evaluation of
///   y[d,m,n] = sum_c sum_k w[d,c,k] * x[c, s*m - P + i_k + r0, s*n - P + j_k + r0]
/// with zero padding, where r0 recentres the offsets onto the kernel grid.
/// Weights are (D, C, side, side); tap k maps to (row, col) in row-major order.
template <typename Scalar>
Tensor4<Scalar> conv_naive(const Tensor4<Scalar>& x, const Tensor4<Scalar>& weight,
                           const ConvSpec& spec) {
  if (x.channels() != spec.in_channels || weight.channels() != spec.in_channels ||
      weight.batch() != spec.out_channels)
    throw ShapeError("conv_naive: channel mismatch, input " + x.shape().str() +
                     ", weight " + weight.shape().str());
  const Index side = spec.kernel_side();
  if (weight.height() != side || weight.width() != side)
    throw ShapeError("conv_naive: weight spatial dims " + weight.shape().str() +
                     " do not match kernel side " + std::to_string(side));

  const Index ho = spec.out_dim(x.height());
  const Index wo = spec.out_dim(x.width());
  Tensor4<Scalar> y(x.batch(), spec.out_channels, ho, wo);

  parallel_for(x.batch(), [&](Index n) {
    for (Index d = 0; d < spec.out_channels; ++d)
      for (Index m = 0; m < ho; ++m)
        for (Index p = 0; p < wo; ++p) {
          Scalar acc = 0;
          for (Index c = 0; c < spec.in_channels; ++c)
            for (Index kr = 0; kr < side; ++kr)
              for (Index kc = 0; kc < side; ++kc) {
                const Index r = m * spec.stride - spec.pad + kr;
                const Index q = p * spec.stride - spec.pad + kc;
                acc += weight(d, c, kr, kc) * x.at_padded(n, c, r, q);
              }
          y(n, d, m, p) = acc;
        }
  });
  return y;
}

/// 1x1 convolution: one GEMM of the (D, C) weight against the (C, H*W)
/// flattening of each batch item, sampling input at strided positions.
template <typename Scalar>
Tensor4<Scalar> conv_pointwise(const Tensor4<Scalar>& x, const Mat<Scalar>& weight,
                               Index stride = 1) {
  if (weight.cols() != x.channels()) {
    std::ostringstream os;
    os << "conv_pointwise: weight is " << weight.rows() << "x" << weight.cols()
       << " but input has " << x.channels() << " channels " << x.shape().str();
    throw ShapeError(os.str());
  }
  const Index ho = (x.height() - 1) / stride + 1;
  const Index wo = (x.width() - 1) / stride + 1;
  Tensor4<Scalar> y(x.batch(), weight.rows(), ho, wo);

  if (stride == 1) {
    parallel_for(x.batch(), [&](Index n) {
      y.channel_matrix(n).noalias() = weight * x.channel_matrix(n);
    });
    return y;
  }

  parallel_for(x.batch(), [&](Index n) {
    Mat<Scalar> sub(x.channels(), ho * wo);
    for (Index c = 0; c < x.channels(); ++c)
      for (Index m = 0; m < ho; ++m)
        for (Index p = 0; p < wo; ++p)
          sub(c, m * wo + p) = x(n, c, m * stride, p * stride);
    y.channel_matrix(n).noalias() = weight * sub;
  });
  return y;
}

/// Layer description for multiply-accumulate accounting.
struct FlopSpec {
  Index out_channels = 1;  // D
  Index in_channels = 1;   // C
  Index kernel = 1;        // K
  Index out_h = 1;
  Index out_w = 1;
  bool depthwise = false;
};

/// MAC count (D*C*K)*(W*H); depthwise layers count D=1 per channel group.
/// Reported as "FLOPs" to match the usual convention.
inline std::int64_t count_flops(const FlopSpec& s) {
  const std::int64_t spatial = std::int64_t(s.out_h) * s.out_w;
  if (s.depthwise) return std::int64_t(s.in_channels) * s.kernel * spatial;
  return std::int64_t(s.out_channels) * s.in_channels * s.kernel * spatial;
}

/// Direct per-channel stencil convolution (no cross-channel mixing).
/// Weights are (C, 1, side, side).
template <typename Scalar>
Tensor4<Scalar> conv_depthwise(const Tensor4<Scalar>& x, const Tensor4<Scalar>& weight,
                               Index stride = 1, Index pad = 1) {
  if (weight.batch() != x.channels() || weight.channels() != 1)
    throw ShapeError("conv_depthwise: weight " + weight.shape().str() +
                     " does not match input channels " + x.shape().str());
  const Index side = weight.height();
  const Index ho = (x.height() + 2 * pad - side) / stride + 1;
  const Index wo = (x.width() + 2 * pad - side) / stride + 1;
  Tensor4<Scalar> y(x.batch(), x.channels(), ho, wo);

  parallel_for(x.batch(), [&](Index n) {
    for (Index c = 0; c < x.channels(); ++c)
      for (Index m = 0; m < ho; ++m)
        for (Index p = 0; p < wo; ++p) {
          Scalar acc = 0;
          for (Index kr = 0; kr < side; ++kr)
            for (Index kc = 0; kc < side; ++kc)
              acc += weight(c, 0, kr, kc) *
                     x.at_padded(n, c, m * stride - pad + kr, p * stride - pad + kc);
          y(n, c, m, p) = acc;
        }
  });
  return y;
}

}  // namespace asl
