#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "asl/models.hpp"

using namespace asl;

namespace {

/// Forwards batch through the top-level children one by one, recording the
/// spatial height after each stage. Requires the body to be a Sequential.
template <typename Scalar>
std::vector<Index> spatial_trace(Network<Scalar>& net, Index hw) {
  auto* seq = dynamic_cast<Sequential<Scalar>*>(&net.body());
  REQUIRE(seq != nullptr);
  std::vector<Index> trace;
  Tensor4<Scalar> cur(1, 3, hw, hw);
  for (Layer<Scalar>* layer : seq->children()) {
    cur = layer->forward(cur, true);
    trace.push_back(cur.height());
  }
  return trace;
}

Index count_kind(Network<float>& net, const std::string& kind) {
  Index count = 0;
  visit_layers<float>(net.body(), [&](Layer<float>& l) {
    if (kind == l.kind()) ++count;
  });
  return count;
}

}  // namespace

TEST_CASE("asnet-cifar: depth must satisfy 6n+2") {
  NetworkConfig cfg;
  cfg.depth = 21;
  CHECK_THROWS_AS(cfg.blocks_per_stage(), ConfigError);
  cfg.depth = 20;
  CHECK(cfg.blocks_per_stage() == 3);
  cfg.depth = 110;
  CHECK(cfg.blocks_per_stage() == 18);
}

TEST_CASE("asnet-cifar depth 20: 9 blocks, widths (w,2w,4w), 32x32 trace") {
  NetworkConfig cfg;
  cfg.depth = 20;
  cfg.width = 16;
  cfg.expansion = 1;
  auto net = build_asnet_cifar<float>(cfg, 1);
  CHECK(count_kind(net, "residual") == 9);
  CHECK(count_kind(net, "asl") == 9);
  CHECK(count_kind(net, "conv2d") == 1);  // stem only

  auto trace = spatial_trace(net, 32);
  // stem keeps 32, stage2 and stage3 halve, pool collapses to 1
  CHECK(trace.front() == 32);
  CHECK(trace[1 + 3 - 1] == 32);       // end of stage 1
  CHECK(trace[1 + 6 - 1] == 16);       // end of stage 2
  CHECK(trace[1 + 9 - 1] == 8);        // end of stage 3
  CHECK(trace[trace.size() - 2] == 1); // after pool
}

TEST_CASE("asnet-cifar: parameter counts near Table-2 figures") {
  NetworkConfig cfg;
  cfg.depth = 20;
  cfg.width = 16;
  cfg.expansion = 1;
  cfg.classes = 10;
  auto net1 = build_asnet_cifar<float>(cfg, 1);
  const double p1 = double(net1.param_count());
  // 0.035M within +-15%
  CHECK(p1 > 0.035e6 * 0.85);
  CHECK(p1 < 0.035e6 * 1.15);

  cfg.expansion = 3;
  auto net3 = build_asnet_cifar<float>(cfg, 1);
  const double p3 = double(net3.param_count());
  CHECK(p3 > 0.1e6 * 0.85);
  CHECK(p3 < 0.1e6 * 1.15);

  cfg.expansion = 1;
  cfg.width = 88;
  auto net88 = build_asnet_cifar<float>(cfg, 1);
  const double p88 = double(net88.param_count());
  CHECK(p88 > 0.99e6 * 0.85);
  CHECK(p88 < 0.99e6 * 1.15);
}

TEST_CASE("asnet-cifar: every shift layer holds exactly 2*C_in parameters") {
  NetworkConfig cfg;
  cfg.depth = 14;
  cfg.width = 8;
  cfg.expansion = 2;
  auto net = build_asnet_cifar<float>(cfg, 2);
  Index checked = 0;
  visit_layers<float>(net.body(), [&](Layer<float>& l) {
    if (auto* asl = dynamic_cast<ActiveShift<float>*>(&l)) {
      CHECK(asl->shift().param_count() == 2 * asl->shift().channels());
      ++checked;
    }
  });
  CHECK(checked == 6);
}

TEST_CASE("parameter count grows quadratically in w and linearly in epsilon") {
  NetworkConfig cfg;
  cfg.depth = 20;
  cfg.expansion = 1;
  cfg.classes = 10;

  cfg.width = 16;
  const double w16 = double(build_asnet_cifar<float>(cfg, 1).param_count());
  cfg.width = 32;
  const double w32 = double(build_asnet_cifar<float>(cfg, 1).param_count());
  cfg.width = 64;
  const double w64 = double(build_asnet_cifar<float>(cfg, 1).param_count());
  // ratios approach 4x when doubling w (linear terms bend it slightly)
  CHECK(w32 / w16 == doctest::Approx(4.0).epsilon(0.15));
  CHECK(w64 / w32 == doctest::Approx(4.0).epsilon(0.10));

  cfg.width = 16;
  cfg.expansion = 2;
  const double e2 = double(build_asnet_cifar<float>(cfg, 1).param_count());
  cfg.expansion = 4;
  const double e4 = double(build_asnet_cifar<float>(cfg, 1).param_count());
  cfg.expansion = 8;
  const double e8 = double(build_asnet_cifar<float>(cfg, 1).param_count());
  // epsilon scales the expanded convs only; increments are constant
  CHECK((e8 - e4) / (e4 - e2) == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("as-resnet: Table-5 spatial trace 224->112->112->56->28->14->7->1") {
  NetworkConfig cfg;
  cfg.family = Family::AsResnet;
  cfg.width = 8;  // trace is width-independent
  cfg.classes = 10;
  auto net = build_asresnet<float>(cfg, 3);
  auto trace = spatial_trace(net, 224);

  CHECK(trace[0] == 112);               // stem
  CHECK(trace[1] == 112);               // stage 1 (1 block, stride 1)
  CHECK(trace[1 + 3] == 56);            // stage 2 (3 blocks, stride 2 first)
  CHECK(trace[1 + 3 + 4] == 28);        // stage 3 (4 blocks)
  CHECK(trace[1 + 3 + 4 + 6] == 14);    // stage 4 (6 blocks)
  CHECK(trace[1 + 3 + 4 + 6 + 3] == 7); // stage 5 (3 blocks)
  CHECK(trace[trace.size() - 2] == 1);  // pool
}

TEST_CASE("as-resnet: w=68 parameter count near Table-6 3.42M") {
  NetworkConfig cfg;
  cfg.family = Family::AsResnet;
  cfg.width = 68;
  cfg.classes = 1000;
  auto net = build_asresnet<float>(cfg, 4);
  const double p = double(net.param_count());
  CHECK(p > 3.42e6 * 0.85);
  CHECK(p < 3.42e6 * 1.15);
}

TEST_CASE("as-resnet: forward of two random images gives finite (2,1000) logits") {
  NetworkConfig cfg;
  cfg.family = Family::AsResnet;
  cfg.width = 32;
  cfg.classes = 1000;
  auto net = build_asresnet<float>(cfg, 5);
  std::mt19937_64 rng(6);
  auto x = Tensor4<float>::random_uniform(2, 3, 224, 224, -1.f, 1.f, rng);
  auto logits = net.logits(x, true);
  CHECK(logits.shape() == Shape4{2, 1000, 1, 1});
  CHECK(logits.all_finite());
}

TEST_CASE("dw baseline variants: structure differences") {
  NetworkConfig cfg;
  cfg.family = Family::DwBaseline;
  cfg.depth = 8;
  cfg.width = 8;

  cfg.variant = DwVariant::Asl1;
  auto asl_net = build_dw_baseline<float>(cfg, 7);
  cfg.variant = DwVariant::Dw31;
  auto dw_net = build_dw_baseline<float>(cfg, 7);
  cfg.variant = DwVariant::Dw3B1;
  auto dwb_net = build_dw_baseline<float>(cfg, 7);

  // 1B-ASL-1 and 1B-DW3-1 differ only in the middle op
  CHECK(count_kind(asl_net, "asl") == 3);
  CHECK(count_kind(asl_net, "dwconv") == 0);
  CHECK(count_kind(dw_net, "asl") == 0);
  CHECK(count_kind(dw_net, "dwconv") == 3);
  CHECK(count_kind(asl_net, "bn") == count_kind(dw_net, "bn"));
  CHECK(count_kind(asl_net, "conv1x1") == count_kind(dw_net, "conv1x1"));

  // 1B-DW3-B-1 has exactly one more BN-ReLU pair per block
  CHECK(count_kind(dwb_net, "bn") == count_kind(dw_net, "bn") + 3);
  CHECK(count_kind(dwb_net, "relu") == count_kind(dw_net, "relu") + 3);

  // identical output shapes for identical config
  std::mt19937_64 rng(8);
  auto x = Tensor4<float>::random_uniform(1, 3, 16, 16, -1.f, 1.f, rng);
  CHECK(asl_net.logits(x, true).shape() == dw_net.logits(x, true).shape());
  CHECK(dw_net.logits(x, true).shape() == dwb_net.logits(x, true).shape());
}

TEST_CASE("grouped-shift ablation model: frozen heuristic shifts, same weight count") {
  NetworkConfig cfg;
  cfg.depth = 14;
  cfg.width = 8;

  cfg.init = ShiftInit::UniformReal;
  cfg.shift_trainable = true;
  auto trained = build_asnet_cifar<float>(cfg, 9);

  cfg.init = ShiftInit::GroupedHeuristic;
  cfg.shift_trainable = false;
  auto grouped = build_asnet_cifar<float>(cfg, 9);

  CHECK(trained.param_count() == grouped.param_count());

  // weight-parameter count (shift params excluded from trainables)
  Index trainable_grouped = 0, trainable_trained = 0;
  for (auto& p : grouped.params())
    if (p.trainable) trainable_grouped += p.size;
  for (auto& p : trained.params())
    if (p.trainable) trainable_trained += p.size;
  CHECK(trainable_trained - trainable_grouped == grouped.shift_param_count());

  // grouped init covers the 3x3 offsets with integer values
  visit_layers<float>(grouped.body(), [&](Layer<float>& l) {
    if (auto* asl = dynamic_cast<ActiveShift<float>*>(&l)) {
      CHECK_FALSE(asl->shift().trainable);
      for (Index i = 0; i < asl->shift().param_count(); ++i) {
        const float v = asl->shift().theta[i];
        CHECK(v == std::nearbyint(v));
        CHECK(std::abs(v) <= 1.0f);
      }
    }
  });
}

TEST_CASE("network config: file round-trip") {
  NetworkConfig cfg;
  cfg.family = Family::DwBaseline;
  cfg.depth = 26;
  cfg.width = 46;
  cfg.expansion = 3;
  cfg.classes = 100;
  cfg.init = ShiftInit::SampledInteger;
  cfg.shift_trainable = false;
  cfg.variant = DwVariant::Dw3B1;

  std::ostringstream os;
  write_network_config(os, cfg);
  std::istringstream is(os.str());
  NetworkConfig back = parse_network_config(is);

  CHECK(back.family == cfg.family);
  CHECK(back.depth == cfg.depth);
  CHECK(back.width == cfg.width);
  CHECK(back.expansion == cfg.expansion);
  CHECK(back.classes == cfg.classes);
  CHECK(back.init == cfg.init);
  CHECK(back.shift_trainable == cfg.shift_trainable);
  CHECK(back.variant == cfg.variant);
}

TEST_CASE("network config: unknown keys and values rejected") {
  std::istringstream bad1("familly = asnet-cifar\n");
  CHECK_THROWS_AS(parse_network_config(bad1), ConfigError);
  std::istringstream bad2("init = gaussian\n");
  CHECK_THROWS_AS(parse_network_config(bad2), ConfigError);
  std::istringstream bad3("depth 20\n");
  CHECK_THROWS_AS(parse_network_config(bad3), ConfigError);
}

TEST_CASE("stride placement switch: conv2-stride variant matches output shapes") {
  NetworkConfig cfg;
  cfg.depth = 8;
  cfg.width = 8;
  cfg.stride_on_conv2 = false;
  auto on_shift = build_asnet_cifar<float>(cfg, 10);
  cfg.stride_on_conv2 = true;
  auto on_conv = build_asnet_cifar<float>(cfg, 10);

  std::mt19937_64 rng(11);
  auto x = Tensor4<float>::random_uniform(1, 3, 16, 16, -1.f, 1.f, rng);
  CHECK(on_shift.logits(x, true).shape() == on_conv.logits(x, true).shape());
  CHECK(on_shift.param_count() == on_conv.param_count());
}
