#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "asl/conv.hpp"
#include "asl/shift.hpp"
#include "asl/tensor.hpp"
#include "oracles.hpp"

using namespace asl;
using asl::testing::rel_err;

TEST_CASE("shift_integer: (0,0) is the identity") {
  std::mt19937_64 rng(1);
  auto x = Tensor4<float>::random_uniform(2, 3, 4, 4, -1.f, 1.f, rng);
  auto y = shift_integer(x, KernelOffset{1, 0, 0});
  CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("shift_integer: (1,0) on a 2-row column pulls [a;b] to [b;0]") {
  Tensor4<float> x(1, 1, 2, 1);
  x(0, 0, 0, 0) = 3.0f;  // a
  x(0, 0, 1, 0) = 5.0f;  // b
  auto y = shift_integer(x, KernelOffset{1, 1, 0});
  CHECK(y(0, 0, 0, 0) == 5.0f);
  CHECK(y(0, 0, 1, 0) == 0.0f);
}

TEST_CASE("shift_integer: down-then-up restores interior rows") {
  std::mt19937_64 rng(2);
  auto x = Tensor4<double>::random_uniform(1, 2, 6, 5, -1.0, 1.0, rng);
  auto once = shift_integer(x, KernelOffset{1, 1, 0});
  auto back = shift_integer(once, KernelOffset{1, -1, 0});
  for (Index c = 0; c < 2; ++c)
    for (Index m = 1; m < 5; ++m)  // rows 1..H-2
      for (Index p = 0; p < 5; ++p) CHECK(back(0, c, m, p) == x(0, c, m, p));
}

TEST_CASE("decompose_conv: equals conv_naive on random 3x3 cases") {
  std::mt19937_64 rng(3);
  auto x = Tensor4<float>::random_uniform(2, 4, 6, 6, -1.f, 1.f, rng);
  auto w = Tensor4<float>::random_uniform(8, 4, 3, 3, -1.f, 1.f, rng);
  ConvSpec spec{.out_channels = 8, .in_channels = 4, .kernel = 9, .stride = 1, .pad = 1};
  auto want = conv_naive(x, w, spec);
  auto got = decompose_conv(x, w, spec);
  CHECK(max_abs_diff(got, want) < 1e-5);
}

TEST_CASE("decompose_conv: 100-case random suite, single and double precision") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<Index> dim(1, 8), batch(1, 2), chans(1, 8);
  for (int t = 0; t < 100; ++t) {
    const Index n = batch(rng), c = chans(rng), d = chans(rng);
    const Index h = std::max<Index>(dim(rng), 3), w = std::max<Index>(dim(rng), 3);
    auto x = Tensor4<double>::random_uniform(n, c, h, w, -1.0, 1.0, rng);
    auto wt = Tensor4<double>::random_uniform(d, c, 3, 3, -1.0, 1.0, rng);
    ConvSpec spec{.out_channels = d, .in_channels = c, .kernel = 9, .stride = 1, .pad = 1};
    CAPTURE(t);
    CHECK(max_abs_diff(decompose_conv(x, wt, spec), conv_naive(x, wt, spec)) < 1e-12);
    auto xf = x.cast<float>();
    auto wf = wt.cast<float>();
    CHECK(max_abs_diff(decompose_conv(xf, wf, spec), conv_naive(xf, wf, spec)) < 1e-5);
  }
}

TEST_CASE("decompose_conv: K=1 reduces to conv_pointwise") {
  std::mt19937_64 rng(5);
  auto x = Tensor4<double>::random_uniform(1, 3, 4, 4, -1.0, 1.0, rng);
  auto w = Tensor4<double>::random_uniform(2, 3, 1, 1, -1.0, 1.0, rng);
  Mat<double> wm(2, 3);
  for (Index d = 0; d < 2; ++d)
    for (Index c = 0; c < 3; ++c) wm(d, c) = w(d, c, 0, 0);
  ConvSpec spec{.out_channels = 2, .in_channels = 3, .kernel = 1};
  CHECK(max_abs_diff(decompose_conv(x, w, spec), conv_pointwise(x, wm)) == 0.0);
}

TEST_CASE("decompose_conv: matches conv_naive with stride 2 and pad 0") {
  std::mt19937_64 rng(6);
  auto x = Tensor4<double>::random_uniform(1, 2, 7, 7, -1.0, 1.0, rng);
  auto w = Tensor4<double>::random_uniform(3, 2, 3, 3, -1.0, 1.0, rng);
  ConvSpec spec{.out_channels = 3, .in_channels = 2, .kernel = 9, .stride = 2, .pad = 0};
  CHECK(max_abs_diff(decompose_conv(x, w, spec), conv_naive(x, w, spec)) < 1e-12);
}

TEST_CASE("shared-shift collapse: sum_k W_k x S(X) == (sum_k W_k) x S(X)") {
  std::mt19937_64 rng(7);
  auto x = Tensor4<double>::random_uniform(2, 3, 5, 5, -1.0, 1.0, rng);
  auto w = Tensor4<double>::random_uniform(4, 3, 3, 3, -1.0, 1.0, rng);
  const KernelOffset shared{1, 1, -1};
  auto sx = shift_integer(x, shared);

  // left side: apply each tap's pointwise weights to the shared shifted input
  Tensor4<double> lhs;
  for (Index k = 1; k <= 9; ++k) {
    auto term = conv_pointwise(sx, weight_slice(w, k));
    lhs = (k == 1) ? std::move(term) : eltwise_sum(lhs, term);
  }
  // right side: collapse the weights first
  Mat<double> wsum = Mat<double>::Zero(4, 3);
  for (Index k = 1; k <= 9; ++k) wsum += weight_slice(w, k);
  auto rhs = conv_pointwise(sx, wsum);
  CHECK(max_abs_diff(lhs, rhs) < 1e-5);
}

TEST_CASE("grouped shift spec: C=27, K=9") {
  auto spec = GroupedShiftSpec::make(27, 9);
  CHECK(spec.per_group == 3);
  CHECK(spec.groups == 9);
  // channels 0..2 belong to the first tap
  for (Index c = 0; c < 3; ++c) CHECK(spec.group_of(c) == 0);
  CHECK(spec.offsets[0].row == -1);
  CHECK(spec.offsets[0].col == -1);
}

TEST_CASE("grouped shift spec: C=64, K=9 leaves a centre remainder group") {
  auto spec = GroupedShiftSpec::make(64, 9);
  CHECK(spec.per_group == 7);
  CHECK(spec.groups == 10);
  CHECK(spec.group_of(62) == 8);
  CHECK(spec.group_of(63) == 9);  // last channel is the remainder
  CHECK(spec.offsets[9].row == 0);
  CHECK(spec.offsets[9].col == 0);
  // every channel belongs to exactly one group and counts add up
  std::vector<Index> sizes(spec.groups, 0);
  for (Index c = 0; c < 64; ++c) sizes[spec.group_of(c)]++;
  Index total = 0;
  for (Index g = 0; g < 9; ++g) {
    CHECK(sizes[g] == 7);
    total += sizes[g];
  }
  CHECK(sizes[9] == 1);
  CHECK(total + sizes[9] == 64);
}

TEST_CASE("shift_grouped: C=K=9 singleton groups equal per-offset integer shifts") {
  std::mt19937_64 rng(8);
  auto x = Tensor4<double>::random_uniform(1, 9, 5, 5, -1.0, 1.0, rng);
  auto spec = GroupedShiftSpec::make(9, 9);
  auto y = shift_grouped(x, spec);
  auto offs = kernel_offsets(9);
  for (Index c = 0; c < 9; ++c) {
    auto single = shift_integer(x, offs[c]);
    for (Index m = 0; m < 5; ++m)
      for (Index p = 0; p < 5; ++p) CHECK(y(0, c, m, p) == single(0, c, m, p));
  }
}

TEST_CASE("shift_grouped: rejects mismatched channel count") {
  Tensor4<float> x(1, 5, 3, 3);
  auto spec = GroupedShiftSpec::make(9, 9);
  CHECK_THROWS_AS(shift_grouped(x, spec), ShapeError);
}

TEST_CASE("asl_forward: zero shift is the identity") {
  std::mt19937_64 rng(9);
  auto x = Tensor4<float>::random_uniform(2, 3, 5, 5, -1.f, 1.f, rng);
  ShiftParams<float> params(3);
  auto [y, cache] = asl_forward(x, params);
  CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("asl_forward: half-pixel row shift averages neighbours") {
  Tensor4<double> x(1, 1, 2, 1);
  x(0, 0, 0, 0) = 1.0;  // a
  x(0, 0, 1, 0) = 3.0;  // b
  ShiftParams<double> params(1);
  params.alpha(0) = 0.5;
  params.beta(0) = 0.0;
  auto [y, cache] = asl_forward(x, params);
  CHECK(y(0, 0, 0, 0) == doctest::Approx(2.0).epsilon(1e-15));  // (a+b)/2
}

TEST_CASE("asl_forward: integer shift parameters match shift_integer exactly") {
  std::mt19937_64 rng(10);
  auto x = Tensor4<double>::random_uniform(2, 2, 6, 6, -1.0, 1.0, rng);
  ShiftParams<double> params(2);
  for (Index c = 0; c < 2; ++c) {
    params.alpha(c) = 1.0;
    params.beta(c) = -1.0;
  }
  auto [y, cache] = asl_forward(x, params);
  auto want = shift_integer(x, KernelOffset{1, 1, -1});
  CHECK(max_abs_diff(y, want) == 0.0);  // bitwise in double
}

TEST_CASE("asl_forward: stride subsamples the shifted field") {
  std::mt19937_64 rng(11);
  auto x = Tensor4<double>::random_uniform(1, 1, 6, 6, -1.0, 1.0, rng);
  ShiftParams<double> params(1);
  params.alpha(0) = 0.25;
  params.beta(0) = -0.75;
  auto [full, c1] = asl_forward(x, params, 1);
  auto [strided, c2] = asl_forward(x, params, 2);
  CHECK(strided.shape() == Shape4{1, 1, 3, 3});
  for (Index m = 0; m < 3; ++m)
    for (Index p = 0; p < 3; ++p) CHECK(strided(0, 0, m, p) == full(0, 0, 2 * m, 2 * p));
}

TEST_CASE("asl_forward: rejects wrong parameter count") {
  Tensor4<float> x(1, 3, 4, 4);
  ShiftParams<float> params(2);
  CHECK_THROWS_AS(asl_forward(x, params), ShapeError);
}

TEST_CASE("asl parameter count is exactly 2C") {
  ShiftParams<float> params(17);
  CHECK(params.param_count() == 34);
  CHECK(params.channels() == 17);
}

TEST_CASE("interpolation stencil: fractional parts are exact") {
  auto s = make_stencil(1.25, -0.75);
  CHECK(s.base_row == 1);
  CHECK(s.base_col == -1);
  CHECK(s.frac_row == 1.25 - std::floor(1.25));
  CHECK(s.frac_col == -0.75 - std::floor(-0.75));
  CHECK(s.frac_col == 0.25);
}

TEST_CASE("asl_backward: zero upstream gradient gives zero everywhere") {
  std::mt19937_64 rng(12);
  auto x = Tensor4<double>::random_uniform(1, 2, 4, 4, -1.0, 1.0, rng);
  ShiftParams<double> params(2);
  params.alpha(0) = 0.3;
  params.beta(1) = -0.6;
  auto [y, cache] = asl_forward(x, params);
  Tensor4<double> zero_grad(y.shape());
  auto grads = asl_backward(zero_grad, cache);
  CHECK(grads.input.flat().cwiseAbs().maxCoeff() == 0.0);
  CHECK(grads.alpha.cwiseAbs().maxCoeff() == 0.0);
  CHECK(grads.beta.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("asl_backward: constant field has zero shift gradient") {
  auto x = Tensor4<double>::constant(1, 1, 5, 5, 2.5);
  ShiftParams<double> params(1);
  params.alpha(0) = 0.4;
  params.beta(0) = 0.2;
  auto [y, cache] = asl_forward(x, params);
  Tensor4<double> g(y.shape());
  g.fill(1.0);
  auto grads = asl_backward(g, cache);
  // interior of a constant field is shift-invariant; only border stencils
  // touching the zero padding contribute, so restrict the upstream gradient
  Tensor4<double> interior_g(y.shape());
  for (Index m = 1; m < 4; ++m)
    for (Index p = 1; p < 4; ++p) interior_g(0, 0, m, p) = 1.0;
  auto interior = asl_backward(interior_g, cache);
  CHECK(interior.alpha.cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(interior.beta.cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("asl_backward: needs a populated cache and matching shapes") {
  AslCache<double> empty;
  Tensor4<double> g(1, 1, 2, 2);
  CHECK_THROWS_AS(asl_backward(g, empty), StateError);

  std::mt19937_64 rng(13);
  auto x = Tensor4<double>::random_uniform(1, 1, 4, 4, -1.0, 1.0, rng);
  ShiftParams<double> params(1);
  auto [y, cache] = asl_forward(x, params);
  Tensor4<double> bad(1, 1, 3, 3);
  CHECK_THROWS_AS(asl_backward(bad, cache), ShapeError);
}

namespace {

// Scalar loss L = <w, asl(x)> lets central differences probe every gradient.
double probe_loss(const Tensor4<double>& x, const ShiftParams<double>& params,
                  const Tensor4<double>& w, Index stride) {
  auto [y, cache] = asl_forward(x, params, stride);
  return (y.flat().array() * w.flat().array()).sum();
}

}  // namespace

TEST_CASE("asl gradients match central finite differences (50 random cases)") {
  std::mt19937_64 rng(14);
  const double h = 1e-5;
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const Index c = 1 + Index(rng() % 3);
    const Index hgt = 5 + Index(rng() % 3);
    const Index wid = 5 + Index(rng() % 3);
    const Index stride = (t % 5 == 0) ? 2 : 1;
    auto x = Tensor4<double>::random_uniform(1, c, hgt, wid, -1.0, 1.0, rng);
    auto params = init_shift<double>(ShiftInit::UniformReal, c, rng());
    // keep parameters away from the integer lattice so the stencil is stable
    for (Index i = 0; i < 2 * c; ++i) {
      double frac = params.theta[i] - std::floor(params.theta[i]);
      if (frac < 0.05 || frac > 0.95) params.theta[i] += 0.11;
    }
    auto [y, cache] = asl_forward(x, params, stride);
    auto w = Tensor4<double>::random_uniform(y.shape().n, y.shape().c, y.shape().h,
                                             y.shape().w, -1.0, 1.0, rng);
    auto grads = asl_backward(w, cache);

    for (Index i = 0; i < 2 * c; ++i) {
      auto plus = params, minus = params;
      plus.theta[i] += h;
      minus.theta[i] -= h;
      const double fd =
          (probe_loss(x, plus, w, stride) - probe_loss(x, minus, w, stride)) / (2 * h);
      const double an =
          (i < c) ? grads.alpha[i] : grads.beta[i - c];
      worst = std::max(worst, rel_err(an, fd));
    }
    // input gradient on a handful of coordinates
    for (int probe = 0; probe < 4; ++probe) {
      const Index idx = Index(rng() % std::uint64_t(x.size()));
      auto xp = x, xm = x;
      xp.data()[idx] += h;
      xm.data()[idx] -= h;
      const double fd =
          (probe_loss(xp, params, w, stride) - probe_loss(xm, params, w, stride)) / (2 * h);
      worst = std::max(worst, rel_err(grads.input.data()[idx], fd));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("asl adjointness: <asl(u), v> == <u, asl_backward_input(v)>") {
  std::mt19937_64 rng(15);
  for (int t = 0; t < 10; ++t) {
    const Index c = 1 + Index(rng() % 3);
    auto u = Tensor4<double>::random_uniform(2, c, 6, 6, -1.0, 1.0, rng);
    auto params = init_shift<double>(ShiftInit::UniformReal, c, rng());
    auto [yu, cache] = asl_forward(u, params);
    auto v = Tensor4<double>::random_uniform(2, c, 6, 6, -1.0, 1.0, rng);
    auto grads = asl_backward(v, cache, /*want_shift_grads=*/false);
    const double lhs = (yu.flat().array() * v.flat().array()).sum();
    const double rhs = (u.flat().array() * grads.input.flat().array()).sum();
    CHECK(std::abs(lhs - rhs) < 1e-10);
  }
}

TEST_CASE("init_shift: grouped heuristic with C=K=9 is the full 3x3 offset set") {
  auto params = init_shift<double>(ShiftInit::GroupedHeuristic, 9, 0);
  auto offs = kernel_offsets(9);
  for (Index c = 0; c < 9; ++c) {
    CHECK(params.alpha(c) == double(offs[c].row));
    CHECK(params.beta(c) == double(offs[c].col));
  }
}

TEST_CASE("init_shift: uniform mode stays in [-1,1] with near-zero mean") {
  const Index c = 50'000;  // 100k draws across alpha and beta
  auto params = init_shift<float>(ShiftInit::UniformReal, c, 1234);
  double sum = 0.0;
  for (Index i = 0; i < 2 * c; ++i) {
    CHECK(params.theta[i] >= -1.0f);
    CHECK(params.theta[i] <= 1.0f);
    sum += params.theta[i];
  }
  CHECK(std::abs(sum / double(2 * c)) < 0.02);
}

TEST_CASE("init_shift: sampled-integer mode is integral") {
  auto params = init_shift<float>(ShiftInit::SampledInteger, 257, 99);
  for (Index i = 0; i < params.param_count(); ++i)
    CHECK(params.theta[i] == std::nearbyint(params.theta[i]));
}

TEST_CASE("init_shift: reproducible for a fixed seed") {
  auto a = init_shift<double>(ShiftInit::SampledReal, 32, 777);
  auto b = init_shift<double>(ShiftInit::SampledReal, 32, 777);
  CHECK((a.theta.array() == b.theta.array()).all());
}
