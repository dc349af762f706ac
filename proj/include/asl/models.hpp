#pragma once

#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "asl/network.hpp"
#include "asl/optim.hpp"

namespace asl {

enum class Family : std::uint8_t { AsnetCifar, AsResnet, DwBaseline };
enum class DwVariant : std::uint8_t { Dw3B1, Dw31, Asl1 };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::AsnetCifar: return "asnet-cifar";
    case Family::AsResnet: return "as-resnet";
    case Family::DwBaseline: return "dw-baseline";
  }
  return "?";
}

inline const char* dw_variant_name(DwVariant v) {
  switch (v) {
    case DwVariant::Dw3B1: return "1B-DW3-B-1";
    case DwVariant::Dw31: return "1B-DW3-1";
    case DwVariant::Asl1: return "1B-ASL-1";
  }
  return "?";
}

struct NetworkConfig {
  Family family = Family::AsnetCifar;
  Index depth = 20;       // counted without shift layers
  Index width = 16;       // base width w
  Index expansion = 1;    // expansion rate on the first 1x1 conv of each block
  Index classes = 10;
  ShiftInit init = ShiftInit::UniformReal;
  bool shift_trainable = true;
  DwVariant variant = DwVariant::Asl1;
  Index input_channels = 3;
  // Block stride normally lives in the shift layer so both 1x1 convs stay
  // dense GEMMs; this switch moves it onto the second conv instead.
  bool stride_on_conv2 = false;

  Index blocks_per_stage() const {
    if (depth < 8 || (depth - 2) % 6 != 0)
      throw ConfigError("depth must satisfy depth = 6n+2 with n >= 1, got " +
                        std::to_string(depth));
    return (depth - 2) / 6;
  }
};

// ---------------------------------------------------------------------------
// Config file: flat key-value text, one `key = value` per line.
// ---------------------------------------------------------------------------
namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline Family parse_family(const std::string& v) {
  if (v == "asnet-cifar") return Family::AsnetCifar;
  if (v == "as-resnet") return Family::AsResnet;
  if (v == "dw-baseline") return Family::DwBaseline;
  throw ConfigError("unknown family '" + v + "'");
}

inline DwVariant parse_variant(const std::string& v) {
  if (v == "1B-DW3-B-1") return DwVariant::Dw3B1;
  if (v == "1B-DW3-1") return DwVariant::Dw31;
  if (v == "1B-ASL-1") return DwVariant::Asl1;
  throw ConfigError("unknown building-block variant '" + v + "'");
}

inline ShiftInit parse_init(const std::string& v) {
  if (v == "grouped") return ShiftInit::GroupedHeuristic;
  if (v == "int-normal") return ShiftInit::SampledInteger;
  if (v == "real-normal") return ShiftInit::SampledReal;
  if (v == "uniform") return ShiftInit::UniformReal;
  throw ConfigError("unknown shift init '" + v + "'");
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected boolean, got '" + v + "'");
}

}  // namespace detail

inline NetworkConfig parse_network_config(std::istream& is) {
  NetworkConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string stripped = detail::trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(stripped.substr(0, eq));
    const std::string val = detail::trim(stripped.substr(eq + 1));
    if (key == "family") cfg.family = detail::parse_family(val);
    else if (key == "depth") cfg.depth = std::stol(val);
    else if (key == "width") cfg.width = std::stol(val);
    else if (key == "epsilon") cfg.expansion = std::stol(val);
    else if (key == "classes") cfg.classes = std::stol(val);
    else if (key == "init") cfg.init = detail::parse_init(val);
    else if (key == "trainable") cfg.shift_trainable = detail::parse_bool(val);
    else if (key == "variant") cfg.variant = detail::parse_variant(val);
    else if (key == "stride_on_conv2") cfg.stride_on_conv2 = detail::parse_bool(val);
    else throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  return cfg;
}

inline NetworkConfig load_network_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open network config: " + path);
  return parse_network_config(is);
}

inline void write_network_config(std::ostream& os, const NetworkConfig& cfg) {
  os << "family = " << family_name(cfg.family) << "\n"
     << "depth = " << cfg.depth << "\n"
     << "width = " << cfg.width << "\n"
     << "epsilon = " << cfg.expansion << "\n"
     << "classes = " << cfg.classes << "\n"
     << "init = " << shift_init_name(cfg.init) << "\n"
     << "trainable = " << (cfg.shift_trainable ? "true" : "false") << "\n"
     << "variant = " << dw_variant_name(cfg.variant) << "\n"
     << "stride_on_conv2 = " << (cfg.stride_on_conv2 ? "true" : "false") << "\n";
}

inline void save_network_config(const std::string& path, const NetworkConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write network config: " + path);
  write_network_config(os, cfg);
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------
namespace detail {

/// Pre-activation residual block:
///   BN-ReLU-1x1Conv(-> eps*out)-BN-ReLU-<middle>-1x1Conv(-> out)
/// where <middle> is the active shift layer or a 3x3 depthwise convolution
/// per the configured variant. Projection shortcut when shape changes.
template <typename Scalar, typename Rng>
LayerPtr<Scalar> make_block(const std::string& name, Index in_ch, Index out_ch,
                            const NetworkConfig& cfg, Index stride, Rng& rng) {
  const Index mid = cfg.expansion * out_ch;
  const Index middle_stride = cfg.stride_on_conv2 ? 1 : stride;
  const Index conv2_stride = cfg.stride_on_conv2 ? stride : 1;

  auto main = std::make_unique<Sequential<Scalar>>(name + ".main");
  main->add(std::make_unique<BatchNorm<Scalar>>(name + ".bn1", in_ch));
  main->add(std::make_unique<Relu<Scalar>>(name + ".relu1"));
  main->add(std::make_unique<Conv1x1<Scalar>>(name + ".conv1", in_ch, mid, 1, rng));
  main->add(std::make_unique<BatchNorm<Scalar>>(name + ".bn2", mid));
  main->add(std::make_unique<Relu<Scalar>>(name + ".relu2"));
  switch (cfg.variant) {
    case DwVariant::Asl1: {
      auto params = init_shift<Scalar>(cfg.init, mid, rng());
      params.trainable = cfg.shift_trainable;
      main->add(std::make_unique<ActiveShift<Scalar>>(name + ".shift", std::move(params),
                                                      middle_stride));
      break;
    }
    case DwVariant::Dw31:
      main->add(std::make_unique<DepthwiseConv<Scalar>>(name + ".dw", mid, 3,
                                                        middle_stride, 1, rng));
      break;
    case DwVariant::Dw3B1:
      main->add(std::make_unique<DepthwiseConv<Scalar>>(name + ".dw", mid, 3,
                                                        middle_stride, 1, rng));
      main->add(std::make_unique<BatchNorm<Scalar>>(name + ".bn3", mid));
      main->add(std::make_unique<Relu<Scalar>>(name + ".relu3"));
      break;
  }
  main->add(std::make_unique<Conv1x1<Scalar>>(name + ".conv2", mid, out_ch, conv2_stride, rng));

  LayerPtr<Scalar> skip;
  if (in_ch != out_ch || stride != 1)
    skip = std::make_unique<Conv1x1<Scalar>>(name + ".proj", in_ch, out_ch, stride, rng);
  return std::make_unique<Residual<Scalar>>(name, std::move(main), std::move(skip));
}

struct StageSpec {
  Index width;
  Index blocks;
  Index stride;
};

template <typename Scalar, typename Rng>
LayerPtr<Scalar> make_trunk(const NetworkConfig& cfg, Index stem_stride,
                            const std::vector<StageSpec>& stages, Rng& rng) {
  auto body = std::make_unique<Sequential<Scalar>>("net");
  body->add(std::make_unique<Conv2d<Scalar>>("stem", cfg.input_channels, cfg.width, 3,
                                             stem_stride, 1, rng));
  Index in_ch = cfg.width;
  Index stage_idx = 0;
  for (const StageSpec& st : stages) {
    ++stage_idx;
    for (Index b = 1; b <= st.blocks; ++b) {
      std::ostringstream name;
      name << "stage" << stage_idx << ".block" << b;
      const Index stride = (b == 1) ? st.stride : 1;
      body->add(make_block<Scalar>(name.str(), in_ch, st.width, cfg, stride, rng));
      in_ch = st.width;
    }
  }
  body->add(std::make_unique<BatchNorm<Scalar>>("head.bn", in_ch));
  body->add(std::make_unique<Relu<Scalar>>("head.relu"));
  body->add(std::make_unique<GlobalAvgPool<Scalar>>("head.pool"));
  body->add(std::make_unique<Linear<Scalar>>("head.fc", in_ch, cfg.classes, rng));
  return body;
}

}  // namespace detail

/// ASNet for CIFAR: 3 stages of widths (w, 2w, 4w), depth = 6n+2, stride 2 at
/// stage transitions, 3x3 stem, global average pool and FC head.
template <typename Scalar>
Network<Scalar> build_asnet_cifar(const NetworkConfig& cfg, std::uint64_t seed) {
  const Index n = cfg.blocks_per_stage();
  std::mt19937_64 rng(seed);
  const std::vector<detail::StageSpec> stages = {
      {cfg.width, n, 1}, {2 * cfg.width, n, 2}, {4 * cfg.width, n, 2}};
  return Network<Scalar>(detail::make_trunk<Scalar>(cfg, 1, stages, rng));
}

/// AS-ResNet for 224x224 inputs: stem stride 2, stages of
/// (w,1,1),(w,3,2),(2w,4,2),(4w,6,2),(8w,3,2), pool and FC head.
template <typename Scalar>
Network<Scalar> build_asresnet(const NetworkConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::vector<detail::StageSpec> stages = {{cfg.width, 1, 1},
                                                 {cfg.width, 3, 2},
                                                 {2 * cfg.width, 4, 2},
                                                 {4 * cfg.width, 6, 2},
                                                 {8 * cfg.width, 3, 2}};
  return Network<Scalar>(detail::make_trunk<Scalar>(cfg, 2, stages, rng));
}

/// Depthwise-convolution comparison networks; ASNet-CIFAR topology with the
/// block middle operation selected by cfg.variant.
template <typename Scalar>
Network<Scalar> build_dw_baseline(const NetworkConfig& cfg, std::uint64_t seed) {
  return build_asnet_cifar<Scalar>(cfg, seed);
}

template <typename Scalar>
Network<Scalar> build_network(const NetworkConfig& cfg, std::uint64_t seed) {
  switch (cfg.family) {
    case Family::AsnetCifar: {
      NetworkConfig c = cfg;
      c.variant = DwVariant::Asl1;
      return build_asnet_cifar<Scalar>(c, seed);
    }
    case Family::AsResnet: {
      NetworkConfig c = cfg;
      c.variant = DwVariant::Asl1;
      return build_asresnet<Scalar>(c, seed);
    }
    case Family::DwBaseline:
      return build_dw_baseline<Scalar>(cfg, seed);
  }
  throw ConfigError("unknown network family");
}

}  // namespace asl
