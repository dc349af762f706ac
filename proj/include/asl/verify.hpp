#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asl/models.hpp"
#include "asl/network.hpp"
#include "asl/shift.hpp"

namespace asl {

/// Outcome of one verification suite; on failure, fail_seed replays the case.
struct SuiteResult {
  std::string name;
  bool pass = false;
  double max_err = 0.0;
  double tolerance = 0.0;
  std::uint64_t fail_seed = 0;
  std::string detail;
};

/// Eq.-style decomposition identity: sum of shifted pointwise convolutions
/// against the direct nested-loop convolution, over random 3x3 cases.
template <typename Scalar>
SuiteResult run_decomposition_suite(int cases, double tolerance, std::uint64_t seed) {
  SuiteResult res{.name = std::string("decomposition[") + dtype_name(dtype_of<Scalar>()) + "]",
                  .tolerance = tolerance};
  res.pass = true;
  for (int t = 0; t < cases; ++t) {
    const std::uint64_t case_seed = seed + std::uint64_t(t);
    std::mt19937_64 rng(case_seed);
    const Index n = 1 + Index(rng() % 2);
    const Index c = 1 + Index(rng() % 8);
    const Index d = 1 + Index(rng() % 8);
    const Index h = 3 + Index(rng() % 6);
    const Index w = 3 + Index(rng() % 6);
    auto x = Tensor4<Scalar>::random_uniform(n, c, h, w, Scalar(-1), Scalar(1), rng);
    auto wt = Tensor4<Scalar>::random_uniform(d, c, 3, 3, Scalar(-1), Scalar(1), rng);
    ConvSpec spec{.out_channels = d, .in_channels = c, .kernel = 9, .stride = 1, .pad = 1};
    const double err = max_abs_diff(decompose_conv(x, wt, spec), conv_naive(x, wt, spec));
    if (err > res.max_err) res.max_err = err;
    if (err > tolerance && res.pass) {
      res.pass = false;
      res.fail_seed = case_seed;
    }
  }
  return res;
}

/// Shared-shift collapse: sum_k W_k x S(X) == (sum_k W_k) x S(X).
template <typename Scalar>
SuiteResult run_collapse_suite(int cases, double tolerance, std::uint64_t seed) {
  SuiteResult res{.name = std::string("shared-shift-collapse[") +
                          dtype_name(dtype_of<Scalar>()) + "]",
                  .tolerance = tolerance};
  res.pass = true;
  for (int t = 0; t < cases; ++t) {
    const std::uint64_t case_seed = seed + std::uint64_t(t);
    std::mt19937_64 rng(case_seed);
    const Index c = 1 + Index(rng() % 6);
    const Index d = 1 + Index(rng() % 6);
    auto x = Tensor4<Scalar>::random_uniform(1, c, 5, 5, Scalar(-1), Scalar(1), rng);
    auto wt = Tensor4<Scalar>::random_uniform(d, c, 3, 3, Scalar(-1), Scalar(1), rng);
    const KernelOffset shared{1, Index(rng() % 3) - 1, Index(rng() % 3) - 1};
    auto sx = shift_integer(x, shared);

    Tensor4<Scalar> lhs;
    Mat<Scalar> wsum = Mat<Scalar>::Zero(d, c);
    for (Index k = 1; k <= 9; ++k) {
      auto term = conv_pointwise(sx, weight_slice(wt, k));
      lhs = (k == 1) ? std::move(term) : eltwise_sum(lhs, term);
      wsum += weight_slice(wt, k);
    }
    const double err = max_abs_diff(lhs, conv_pointwise(sx, wsum));
    if (err > res.max_err) res.max_err = err;
    if (err > tolerance && res.pass) {
      res.pass = false;
      res.fail_seed = case_seed;
    }
  }
  return res;
}

/// Test-fixture fault injection for exercising the failure path end to end.
enum class GradFault { None, FlipAlphaSign };

namespace detail {

inline double asl_probe_loss(const Tensor4<double>& x, const ShiftParams<double>& params,
                             const Tensor4<double>& w, Index stride) {
  auto [y, cache] = asl_forward(x, params, stride);
  return (y.flat().array() * w.flat().array()).sum();
}

inline double fd_rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
}

}  // namespace detail

/// Central-difference check of all three active-shift gradients (input,
/// alpha, beta) on random non-integer shifts, double precision.
inline SuiteResult run_asl_gradient_suite(int cases, double tolerance, std::uint64_t seed,
                                          GradFault fault = GradFault::None) {
  SuiteResult res{.name = "asl-gradients[fd]", .tolerance = tolerance};
  res.pass = true;
  const double h = 1e-5;
  for (int t = 0; t < cases; ++t) {
    const std::uint64_t case_seed = seed + std::uint64_t(t);
    std::mt19937_64 rng(case_seed);
    const Index c = 1 + Index(rng() % 3);
    const Index hgt = 5 + Index(rng() % 3);
    const Index wid = 5 + Index(rng() % 3);
    const Index stride = (t % 5 == 0) ? 2 : 1;
    auto x = Tensor4<double>::random_uniform(1, c, hgt, wid, -1.0, 1.0, rng);
    auto params = init_shift<double>(ShiftInit::UniformReal, c, rng());
    for (Index i = 0; i < 2 * c; ++i) {
      const double frac = params.theta[i] - std::floor(params.theta[i]);
      if (frac < 0.05 || frac > 0.95) params.theta[i] += 0.11;
    }
    auto [y, cache] = asl_forward(x, params, stride);
    auto w = Tensor4<double>::random_uniform(y.shape().n, y.shape().c, y.shape().h,
                                             y.shape().w, -1.0, 1.0, rng);
    auto grads = asl_backward(w, cache);
    if (fault == GradFault::FlipAlphaSign) grads.alpha = -grads.alpha;

    double case_err = 0.0;
    for (Index i = 0; i < 2 * c; ++i) {
      auto plus = params, minus = params;
      plus.theta[i] += h;
      minus.theta[i] -= h;
      const double fd = (detail::asl_probe_loss(x, plus, w, stride) -
                         detail::asl_probe_loss(x, minus, w, stride)) /
                        (2 * h);
      const double an = (i < c) ? grads.alpha[i] : grads.beta[i - c];
      case_err = std::max(case_err, detail::fd_rel_err(an, fd));
    }
    for (int probe = 0; probe < 4; ++probe) {
      const Index idx = Index(rng() % std::uint64_t(x.size()));
      auto xp = x, xm = x;
      xp.data()[idx] += h;
      xm.data()[idx] -= h;
      const double fd = (detail::asl_probe_loss(xp, params, w, stride) -
                         detail::asl_probe_loss(xm, params, w, stride)) /
                        (2 * h);
      case_err = std::max(case_err, detail::fd_rel_err(grads.input.data()[idx], fd));
    }
    if (case_err > res.max_err) res.max_err = case_err;
    if (case_err > tolerance && res.pass) {
      res.pass = false;
      res.fail_seed = case_seed;
    }
  }
  return res;
}

/// <asl(u), v> == <u, asl_backward_input(v)> for fixed shift parameters.
inline SuiteResult run_adjointness_suite(int cases, double tolerance, std::uint64_t seed) {
  SuiteResult res{.name = "asl-adjointness", .tolerance = tolerance};
  res.pass = true;
  for (int t = 0; t < cases; ++t) {
    const std::uint64_t case_seed = seed + std::uint64_t(t);
    std::mt19937_64 rng(case_seed);
    const Index c = 1 + Index(rng() % 4);
    auto u = Tensor4<double>::random_uniform(2, c, 6, 6, -1.0, 1.0, rng);
    auto v = Tensor4<double>::random_uniform(2, c, 6, 6, -1.0, 1.0, rng);
    auto params = init_shift<double>(ShiftInit::UniformReal, c, rng());
    auto [yu, cache] = asl_forward(u, params);
    auto grads = asl_backward(v, cache, /*want_shift_grads=*/false);
    const double lhs = (yu.flat().array() * v.flat().array()).sum();
    const double rhs = (u.flat().array() * grads.input.flat().array()).sum();
    const double err = std::abs(lhs - rhs);
    if (err > res.max_err) res.max_err = err;
    if (err > tolerance && res.pass) {
      res.pass = false;
      res.fail_seed = case_seed;
    }
  }
  return res;
}

/// Whole-network finite-difference gradient check on a three-block toy net
/// containing every layer kind (stem conv, 1x1 convs, shift, BN, ReLU,
/// residual sums, pool, FC, softmax loss). Double precision.
inline SuiteResult run_network_gradcheck(double tolerance, std::uint64_t seed,
                                         int coords_per_param = 20,
                                         DwVariant variant = DwVariant::Asl1) {
  SuiteResult res{.name = std::string("network-gradcheck[") + dw_variant_name(variant) + "]",
                  .tolerance = tolerance};
  NetworkConfig cfg;
  cfg.family = Family::DwBaseline;
  cfg.variant = variant;
  cfg.depth = 8;  // one block per stage
  cfg.width = 4;
  cfg.expansion = 2;
  cfg.classes = 3;
  auto net = build_dw_baseline<double>(cfg, seed);

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  auto x = Tensor4<double>::random_uniform(2, 3, 8, 8, -1.0, 1.0, rng);
  std::vector<int> labels = {int(rng() % 3), int(rng() % 3)};

  auto params = net.params();
  // Nudge shift parameters off the integer lattice; the finite-difference
  // stencil must not straddle a floor discontinuity.
  for (auto& p : params) {
    if (p.kind != ParamKind::Shift) continue;
    for (Index i = 0; i < p.size; ++i) {
      const double frac = p.value[i] - std::floor(p.value[i]);
      if (frac < 0.02 || frac > 0.98) p.value[i] += 0.017;
    }
  }

  net.zero_grads();
  net.forward(x, labels, /*training=*/true);
  net.backward();

  const double h = 1e-5;
  res.pass = true;
  for (auto& p : params) {
    const Index probes = std::min<Index>(coords_per_param, p.size);
    for (Index t = 0; t < probes; ++t) {
      const Index i = (p.size <= coords_per_param) ? t : Index(rng() % std::uint64_t(p.size));
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double lp = net.forward(x, labels, true).loss;
      p.value[i] = saved - h;
      const double lm = net.forward(x, labels, true).loss;
      p.value[i] = saved;
      const double fd = (lp - lm) / (2 * h);
      const double err = detail::fd_rel_err(p.grad[i], fd);
      if (err > res.max_err) {
        res.max_err = err;
        res.detail = p.name + "[" + std::to_string(i) + "]";
      }
      if (err > tolerance) res.pass = false;
    }
  }
  res.fail_seed = res.pass ? 0 : seed;
  return res;
}

}  // namespace asl
