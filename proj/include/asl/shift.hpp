#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "asl/conv.hpp"
#include "asl/parallel.hpp"
#include "asl/tensor.hpp"

namespace asl {

/// Spatially shifted copy: y[n,c,m,p] = x[n,c, m+i_k, p+j_k], zero outside.
template <typename Scalar>
Tensor4<Scalar> shift_integer(const Tensor4<Scalar>& x, const KernelOffset& offset) {
  Tensor4<Scalar> y(x.shape());
  parallel_for(x.batch(), [&](Index n) {
    for (Index c = 0; c < x.channels(); ++c)
      for (Index m = 0; m < x.height(); ++m)
        for (Index p = 0; p < x.width(); ++p)
          y(n, c, m, p) = x.at_padded(n, c, m + offset.row, p + offset.col);
  });
  return y;
}

/// Extracts the (D, C) weight slice for kernel tap k from a (D, C, side, side)
/// weight tensor.
template <typename Scalar>
Mat<Scalar> weight_slice(const Tensor4<Scalar>& weight, Index k) {
  const Index side = weight.height();
  const Index kr = (k - 1) / side;
  const Index kc = (k - 1) % side;
  Mat<Scalar> w(weight.batch(), weight.channels());
  for (Index d = 0; d < weight.batch(); ++d)
    for (Index c = 0; c < weight.channels(); ++c) w(d, c) = weight(d, c, kr, kc);
  return w;
}

/// Convolution rewritten as the sum over kernel taps of pointwise convolutions
/// on integer-shifted inputs: Y = sum_k W_k x S_k(X). Matches conv_naive up to
/// floating-point accumulation order. Shift offsets absorb the difference
/// between the requested padding and the centred kernel grid.
template <typename Scalar>
Tensor4<Scalar> decompose_conv(const Tensor4<Scalar>& x, const Tensor4<Scalar>& weight,
                               const ConvSpec& spec) {
  if (x.channels() != spec.in_channels || weight.channels() != spec.in_channels ||
      weight.batch() != spec.out_channels)
    throw ShapeError("decompose_conv: channel mismatch, input " + x.shape().str() +
                     ", weight " + weight.shape().str());
  const Index side = spec.kernel_side();
  const Index recentre = (side - 1) / 2 - spec.pad;
  if (recentre < 0)
    throw ShapeError("decompose_conv: padding beyond the kernel half-width is unsupported");

  Tensor4<Scalar> y;
  for (const KernelOffset& off : kernel_offsets(spec.kernel)) {
    KernelOffset adjusted{off.k, off.row + recentre, off.col + recentre};
    Tensor4<Scalar> shifted = shift_integer(x, adjusted);
    Tensor4<Scalar> term = conv_pointwise(shifted, weight_slice(weight, off.k), spec.stride);
    y = (off.k == 1) ? std::move(term) : eltwise_sum(y, term);
  }

  // Pointwise output spans ceil(H/s); the convolution's own extent can be
  // shorter for pad < (side-1)/2. Sample positions coincide, so crop.
  const Index ho = spec.out_dim(x.height());
  const Index wo = spec.out_dim(x.width());
  if (ho == y.height() && wo == y.width()) return y;
  Tensor4<Scalar> cropped(y.batch(), y.channels(), ho, wo);
  for (Index n = 0; n < y.batch(); ++n)
    for (Index c = 0; c < y.channels(); ++c)
      for (Index m = 0; m < ho; ++m)
        for (Index p = 0; p < wo; ++p) cropped(n, c, m, p) = y(n, c, m, p);
  return cropped;
}

/// Channel grouping for the heuristic shift: n = floor(C/K) channels per
/// group, one group per kernel tap, plus a remainder group when K does not
/// divide C.
struct GroupedShiftSpec {
  Index channels = 0;   // C
  Index kernel = 9;     // K
  Index per_group = 0;  // n
  Index groups = 0;     // G
  std::vector<KernelOffset> offsets;  // one per group

  static GroupedShiftSpec make(Index channels, Index kernel = 9) {
    if (channels < 1) throw ConfigError("GroupedShiftSpec: channels must be >= 1");
    GroupedShiftSpec s;
    s.channels = channels;
    s.kernel = kernel;
    s.per_group = channels / kernel;
    s.groups = (channels % kernel == 0) ? kernel : kernel + 1;
    s.offsets = kernel_offsets(kernel);
    if (s.groups == kernel + 1) {
      // Remainder channels keep the centre shift; (0,0) loses no information.
      s.offsets.push_back({kernel + 1, 0, 0});
    }
    return s;
  }

  /// Group index (0-based) owning channel c (0-based).
  Index group_of(Index c) const {
    if (per_group == 0) return groups - 1;
    return std::min(c / per_group, groups - 1);
  }
};

/// Heuristic grouped shift S_G: every channel of group g moves by that
/// group's kernel offset.
template <typename Scalar>
Tensor4<Scalar> shift_grouped(const Tensor4<Scalar>& x, const GroupedShiftSpec& spec) {
  if (x.channels() != spec.channels)
    throw ShapeError("shift_grouped: spec built for " + std::to_string(spec.channels) +
                     " channels, input is " + x.shape().str());
  Tensor4<Scalar> y(x.shape());
  parallel_for(x.batch(), [&](Index n) {
    for (Index c = 0; c < x.channels(); ++c) {
      const KernelOffset& off = spec.offsets[spec.group_of(c)];
      for (Index m = 0; m < x.height(); ++m)
        for (Index p = 0; p < x.width(); ++p)
          y(n, c, m, p) = x.at_padded(n, c, m + off.row, p + off.col);
    }
  });
  return y;
}

enum class ShiftInit : std::uint8_t {
  GroupedHeuristic = 0,
  SampledInteger = 1,
  SampledReal = 2,
  UniformReal = 3,
};

inline const char* shift_init_name(ShiftInit m) {
  switch (m) {
    case ShiftInit::GroupedHeuristic: return "grouped";
    case ShiftInit::SampledInteger: return "int-normal";
    case ShiftInit::SampledReal: return "real-normal";
    case ShiftInit::UniformReal: return "uniform";
  }
  return "?";
}

/// Per-channel shift pairs theta = {(alpha_c, beta_c)}, stored stacked as
/// [alpha_0..alpha_{C-1}, beta_0..beta_{C-1}]. alpha shifts rows, beta
/// columns, in pixels.
template <typename Scalar>
struct ShiftParams {
  Vec<Scalar> theta;
  bool trainable = true;
  ShiftInit init_mode = ShiftInit::UniformReal;

  ShiftParams() = default;
  explicit ShiftParams(Index channels) : theta(Vec<Scalar>::Zero(2 * channels)) {}

  Index channels() const { return theta.size() / 2; }
  Index param_count() const { return theta.size(); }  // exactly 2*C

  Scalar alpha(Index c) const { return theta[c]; }
  Scalar beta(Index c) const { return theta[channels() + c]; }
  Scalar& alpha(Index c) { return theta[c]; }
  Scalar& beta(Index c) { return theta[channels() + c]; }

  auto alphas() { return theta.segment(0, channels()); }
  auto betas() { return theta.segment(channels(), channels()); }
};

template <typename Scalar>
ShiftParams<Scalar> init_shift(ShiftInit mode, Index channels, std::uint64_t seed,
                               Index kernel = 9) {
  if (channels < 1) throw ConfigError("init_shift: channels must be >= 1");
  ShiftParams<Scalar> params(channels);
  params.init_mode = mode;
  std::mt19937_64 rng(seed);
  switch (mode) {
    case ShiftInit::UniformReal: {
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      for (Index c = 0; c < channels; ++c) {
        params.alpha(c) = Scalar(dist(rng));
        params.beta(c) = Scalar(dist(rng));
      }
      break;
    }
    case ShiftInit::SampledReal: {
      std::normal_distribution<double> dist(0.0, 1.0);
      for (Index c = 0; c < channels; ++c) {
        params.alpha(c) = Scalar(dist(rng));
        params.beta(c) = Scalar(dist(rng));
      }
      break;
    }
    case ShiftInit::SampledInteger: {
      std::normal_distribution<double> dist(0.0, 1.0);
      for (Index c = 0; c < channels; ++c) {
        params.alpha(c) = Scalar(std::nearbyint(dist(rng)));
        params.beta(c) = Scalar(std::nearbyint(dist(rng)));
      }
      break;
    }
    case ShiftInit::GroupedHeuristic: {
      const auto spec = GroupedShiftSpec::make(channels, kernel);
      for (Index c = 0; c < channels; ++c) {
        const KernelOffset& off = spec.offsets[spec.group_of(c)];
        params.alpha(c) = Scalar(off.row);
        params.beta(c) = Scalar(off.col);
      }
      break;
    }
  }
  return params;
}

/// Floor decomposition of one channel's shift pair: integer base offsets and
/// the fractional bilinear weights Delta = theta - floor(theta).
template <typename Scalar>
struct InterpolationStencil {
  Index base_row = 0;   // floor(alpha_c)
  Index base_col = 0;   // floor(beta_c)
  Scalar frac_row = 0;  // Delta alpha_c in [0,1)
  Scalar frac_col = 0;  // Delta beta_c in [0,1)
};

template <typename Scalar>
InterpolationStencil<Scalar> make_stencil(Scalar alpha, Scalar beta) {
  InterpolationStencil<Scalar> s;
  s.base_row = static_cast<Index>(std::floor(double(alpha)));
  s.base_col = static_cast<Index>(std::floor(double(beta)));
  s.frac_row = alpha - Scalar(s.base_row);
  s.frac_col = beta - Scalar(s.base_col);
  return s;
}

/// State captured by asl_forward for the matching backward call.
template <typename Scalar>
struct AslCache {
  Tensor4<Scalar> input;
  Vec<Scalar> theta;  // snapshot at forward time
  Index stride = 1;
  Shape4 out_shape;

  bool valid() const { return out_shape.count() > 0; }
};

/// Active shift, forward value only: resamples channel c at
/// (s*m + alpha_c, s*p + beta_c) by bilinear interpolation with zero padding
/// outside the feature map.
template <typename Scalar>
Tensor4<Scalar> asl_apply(const Tensor4<Scalar>& x, const ShiftParams<Scalar>& params,
                          Index stride = 1) {
  if (params.channels() != x.channels())
    throw ShapeError("asl_apply: " + std::to_string(params.channels()) +
                     " shift pairs for input " + x.shape().str());
  const Index ho = (x.height() - 1) / stride + 1;
  const Index wo = (x.width() - 1) / stride + 1;
  Tensor4<Scalar> y(x.batch(), x.channels(), ho, wo);

  parallel_for(x.batch(), [&](Index n) {
    for (Index c = 0; c < x.channels(); ++c) {
      const auto st = make_stencil(params.alpha(c), params.beta(c));
      const Scalar w1 = (Scalar(1) - st.frac_row) * (Scalar(1) - st.frac_col);
      const Scalar w2 = (Scalar(1) - st.frac_row) * st.frac_col;
      const Scalar w3 = st.frac_row * (Scalar(1) - st.frac_col);
      const Scalar w4 = st.frac_row * st.frac_col;
      for (Index m = 0; m < ho; ++m) {
        const Index r = m * stride + st.base_row;
        for (Index p = 0; p < wo; ++p) {
          const Index q = p * stride + st.base_col;
          const Scalar z1 = x.at_padded(n, c, r, q);
          const Scalar z2 = x.at_padded(n, c, r, q + 1);
          const Scalar z3 = x.at_padded(n, c, r + 1, q);
          const Scalar z4 = x.at_padded(n, c, r + 1, q + 1);
          y(n, c, m, p) = z1 * w1 + z2 * w2 + z3 * w3 + z4 * w4;
        }
      }
    }
  });
  return y;
}

/// Forward pass that also captures the state needed by asl_backward.
template <typename Scalar>
std::pair<Tensor4<Scalar>, AslCache<Scalar>> asl_forward(const Tensor4<Scalar>& x,
                                                         const ShiftParams<Scalar>& params,
                                                         Index stride = 1) {
  Tensor4<Scalar> y = asl_apply(x, params, stride);
  AslCache<Scalar> cache;
  cache.input = x;
  cache.theta = params.theta;
  cache.stride = stride;
  cache.out_shape = y.shape();
  return {std::move(y), std::move(cache)};
}

template <typename Scalar>
struct AslGrads {
  Tensor4<Scalar> input;
  // Shift gradients accumulate in double regardless of tensor precision;
  // the spatial sums are large and cancellation-prone.
  Eigen::VectorXd alpha;
  Eigen::VectorXd beta;
};

/// Backward pass of the active shift. The input gradient scatters each output
/// gradient to its four stencil corners with the forward bilinear weights;
/// the shift gradients contract grad_out against the corner differences
///   d/dalpha = (Z3 - Z1)(1 - Dbeta) + (Z4 - Z2) Dbeta
///   d/dbeta  = (Z2 - Z1)(1 - Dalpha) + (Z4 - Z3) Dalpha
/// summed over batch and spatial positions.
template <typename Scalar>
AslGrads<Scalar> asl_backward(const Tensor4<Scalar>& grad_out, const AslCache<Scalar>& cache,
                              bool want_shift_grads = true) {
  if (!cache.valid())
    throw StateError("asl_backward: cache does not hold a forward pass");
  if (!(grad_out.shape() == cache.out_shape))
    throw ShapeError("asl_backward: grad shape " + grad_out.shape().str() +
                     " does not match forward output " + cache.out_shape.str());

  const Tensor4<Scalar>& x = cache.input;
  const Index channels = x.channels();
  const Index stride = cache.stride;
  AslGrads<Scalar> grads;
  grads.input = Tensor4<Scalar>(x.shape());
  grads.alpha = Eigen::VectorXd::Zero(channels);
  grads.beta = Eigen::VectorXd::Zero(channels);

  // Per-(n,c) accumulators keep the batch loop race-free and the final
  // reduction order fixed.
  Mat<double> alpha_acc = Mat<double>::Zero(x.batch(), channels);
  Mat<double> beta_acc = Mat<double>::Zero(x.batch(), channels);

  parallel_for(x.batch(), [&](Index n) {
    for (Index c = 0; c < channels; ++c) {
      const auto st = make_stencil(cache.theta[c], cache.theta[channels + c]);
      const Scalar da = st.frac_row;
      const Scalar db = st.frac_col;
      const Scalar w1 = (Scalar(1) - da) * (Scalar(1) - db);
      const Scalar w2 = (Scalar(1) - da) * db;
      const Scalar w3 = da * (Scalar(1) - db);
      const Scalar w4 = da * db;
      double ga = 0.0, gb = 0.0;
      for (Index m = 0; m < grad_out.height(); ++m) {
        const Index r = m * stride + st.base_row;
        for (Index p = 0; p < grad_out.width(); ++p) {
          const Index q = p * stride + st.base_col;
          const Scalar g = grad_out(n, c, m, p);
          const bool r0 = r >= 0 && r < x.height();
          const bool r1 = r + 1 >= 0 && r + 1 < x.height();
          const bool q0 = q >= 0 && q < x.width();
          const bool q1 = q + 1 >= 0 && q + 1 < x.width();
          if (r0 && q0) grads.input(n, c, r, q) += g * w1;
          if (r0 && q1) grads.input(n, c, r, q + 1) += g * w2;
          if (r1 && q0) grads.input(n, c, r + 1, q) += g * w3;
          if (r1 && q1) grads.input(n, c, r + 1, q + 1) += g * w4;
          if (want_shift_grads) {
            const Scalar z1 = x.at_padded(n, c, r, q);
            const Scalar z2 = x.at_padded(n, c, r, q + 1);
            const Scalar z3 = x.at_padded(n, c, r + 1, q);
            const Scalar z4 = x.at_padded(n, c, r + 1, q + 1);
            ga += double(g) * (double(z3 - z1) * (1.0 - double(db)) +
                               double(z4 - z2) * double(db));
            gb += double(g) * (double(z2 - z1) * (1.0 - double(da)) +
                               double(z4 - z3) * double(da));
          }
        }
      }
      alpha_acc(n, c) = ga;
      beta_acc(n, c) = gb;
    }
  });

  if (want_shift_grads) {
    for (Index n = 0; n < x.batch(); ++n) {
      grads.alpha += alpha_acc.row(n).transpose();
      grads.beta += beta_acc.row(n).transpose();
    }
  }
  return grads;
}

}  // namespace asl
