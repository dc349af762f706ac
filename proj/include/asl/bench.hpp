#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "asl/conv.hpp"
#include "asl/layers.hpp"
#include "asl/parallel.hpp"
#include "asl/shift.hpp"

namespace asl {

enum class BenchKind {
  DwConv3x3,
  Conv1x1,
  BnAffine,
  Relu,
  EltwiseSum,
  ActiveShiftLayer,
};

inline const char* bench_kind_name(BenchKind k) {
  switch (k) {
    case BenchKind::DwConv3x3: return "dwconv3x3";
    case BenchKind::Conv1x1: return "conv1x1";
    case BenchKind::BnAffine: return "bn_affine";
    case BenchKind::Relu: return "relu";
    case BenchKind::EltwiseSum: return "eltwise_sum";
    case BenchKind::ActiveShiftLayer: return "asl";
  }
  return "?";
}

inline BenchKind parse_bench_kind(const std::string& s) {
  for (BenchKind k : {BenchKind::DwConv3x3, BenchKind::Conv1x1, BenchKind::BnAffine,
                      BenchKind::Relu, BenchKind::EltwiseSum, BenchKind::ActiveShiftLayer})
    if (s == bench_kind_name(k)) return k;
  throw UsageError("unknown benchmark layer '" + s + "'");
}

/// The row set of the inference-time comparison: both convolution styles plus
/// the auxiliary layers, and the active shift layer.
inline std::vector<BenchKind> table1_layers() {
  return {BenchKind::DwConv3x3, BenchKind::Conv1x1, BenchKind::BnAffine,
          BenchKind::Relu,      BenchKind::EltwiseSum, BenchKind::ActiveShiftLayer};
}

struct BenchInputSpec {
  Index channels = 64;
  Index out_channels = 64;
  Index side = 224;
};

struct BenchRecord {
  std::string name;
  BenchInputSpec input;
  int repetitions = 0;
  int warmup = 0;
  double ms_median = 0.0;
  double ms_mean = 0.0;
  std::int64_t flops = 0;
  double ms_per_mflop = 0.0;
  bool timer_warning = false;  // workload too small for the clock resolution
};

struct BenchReport {
  std::vector<BenchRecord> records;
  int threads = 1;
  DType precision = DType::Float32;
};

namespace detail {

inline double timer_resolution_ms() {
  using clock = std::chrono::steady_clock;
  double best = 1e9;
  for (int t = 0; t < 8; ++t) {
    auto a = clock::now();
    auto b = clock::now();
    while (b == a) b = clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(b - a).count());
  }
  return best;
}

/// MAC accounting per benched layer. Convolutions follow the (D*C*K)*(W*H)
/// rule; elementwise layers count one operation per element; the shift layer
/// counts its four corner multiply-accumulates.
inline std::int64_t bench_flops(BenchKind kind, const BenchInputSpec& in) {
  const Index hw = in.side * in.side;
  switch (kind) {
    case BenchKind::DwConv3x3:
      return count_flops({.out_channels = in.channels, .in_channels = in.channels,
                          .kernel = 9, .out_h = in.side, .out_w = in.side,
                          .depthwise = true});
    case BenchKind::Conv1x1:
      return count_flops({.out_channels = in.out_channels, .in_channels = in.channels,
                          .kernel = 1, .out_h = in.side, .out_w = in.side});
    case BenchKind::BnAffine:
    case BenchKind::Relu:
    case BenchKind::EltwiseSum:
      return std::int64_t(in.channels) * hw;
    case BenchKind::ActiveShiftLayer:
      return 4 * std::int64_t(in.channels) * hw;
  }
  return 0;
}

}  // namespace detail

/// Times one forward operation, single-threaded, monotonic clock, with a
/// warmup that is excluded from the statistics.
inline BenchRecord bench_layer(BenchKind kind, const BenchInputSpec& in, int repetitions = 100,
                               int warmup = 10) {
  if (num_threads() != 1)
    throw StateError("bench_layer: measurement requires single-threaded mode, but " +
                     std::to_string(num_threads()) + " threads are enabled");
  if (repetitions < 1) throw UsageError("bench_layer: repetitions must be >= 1");

  using Scalar = float;
  std::mt19937_64 rng(414213562);
  auto x = Tensor4<Scalar>::random_uniform(1, in.channels, in.side, in.side, -1.f, 1.f, rng);

  std::function<void()> op;
  double sink = 0.0;
  switch (kind) {
    case BenchKind::DwConv3x3: {
      auto w = Tensor4<Scalar>::random_uniform(in.channels, 1, 3, 3, -1.f, 1.f, rng);
      op = [&, w] { sink += double(conv_depthwise(x, w, 1, 1)(0, 0, 0, 0)); };
      break;
    }
    case BenchKind::Conv1x1: {
      Mat<Scalar> w(in.out_channels, in.channels);
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      for (Index i = 0; i < w.rows(); ++i)
        for (Index j = 0; j < w.cols(); ++j) w(i, j) = Scalar(dist(rng));
      op = [&, w] { sink += double(conv_pointwise(x, w)(0, 0, 0, 0)); };
      break;
    }
    case BenchKind::BnAffine: {
      auto bn = std::make_shared<BatchNorm<Scalar>>("bench.bn", in.channels);
      bn->forward(x, /*training=*/true);  // prime statistics; fused eval is timed
      op = [&, bn] { sink += double(bn->forward(x, false)(0, 0, 0, 0)); };
      break;
    }
    case BenchKind::Relu: {
      op = [&] {
        Tensor4<Scalar> y(x.shape());
        y.flat() = x.flat().cwiseMax(Scalar(0));
        sink += double(y(0, 0, 0, 0));
      };
      break;
    }
    case BenchKind::EltwiseSum: {
      auto b = Tensor4<Scalar>::random_uniform(1, in.channels, in.side, in.side, -1.f, 1.f, rng);
      op = [&, b] { sink += double(eltwise_sum(x, b)(0, 0, 0, 0)); };
      break;
    }
    case BenchKind::ActiveShiftLayer: {
      auto params = init_shift<Scalar>(ShiftInit::UniformReal, in.channels, 7);
      op = [&, params] { sink += double(asl_apply(x, params)(0, 0, 0, 0)); };
      break;
    }
  }

  for (int i = 0; i < warmup; ++i) op();

  using clock = std::chrono::steady_clock;
  std::vector<double> ms{};
  ms.resize(std::size_t(repetitions));
  for (int i = 0; i < repetitions; ++i) {
    const auto t0 = clock::now();
    op();
    const auto t1 = clock::now();
    ms[std::size_t(i)] = std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  volatile double guard = sink;  // keep the timed work observable
  (void)guard;

  std::sort(ms.begin(), ms.end());
  BenchRecord rec;
  rec.name = bench_kind_name(kind);
  rec.input = in;
  rec.repetitions = repetitions;
  rec.warmup = warmup;
  rec.ms_median = (repetitions % 2 == 1)
                      ? ms[std::size_t(repetitions / 2)]
                      : 0.5 * (ms[std::size_t(repetitions / 2 - 1)] + ms[std::size_t(repetitions / 2)]);
  double total = 0.0;
  for (double v : ms) total += v;
  rec.ms_mean = total / double(repetitions);
  rec.flops = detail::bench_flops(kind, in);
  rec.ms_per_mflop = rec.ms_median / (double(rec.flops) / 1e6);
  rec.timer_warning = rec.ms_median < 1000.0 * detail::timer_resolution_ms();
  return rec;
}

enum class ReportFormat { Text, Csv, Json };

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "text") return ReportFormat::Text;
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  throw UsageError("unknown report format '" + s + "' (expected text, csv or json)");
}

/// Serializes a report with the stable column order
/// name, time_ms_median, time_ms_mean, flops, ms_per_mflop.
inline std::string emit_report(const BenchReport& report, ReportFormat format) {
  if (report.records.empty()) throw UsageError("emit_report: no benchmark records");
  std::ostringstream os;
  switch (format) {
    case ReportFormat::Text: {
      os << std::left << std::setw(14) << "name" << std::right << std::setw(16)
         << "time_ms_median" << std::setw(14) << "time_ms_mean" << std::setw(14) << "flops"
         << std::setw(14) << "ms_per_mflop" << "\n";
      for (const auto& r : report.records) {
        os << std::left << std::setw(14) << r.name << std::right << std::fixed
           << std::setprecision(4) << std::setw(16) << r.ms_median << std::setw(14)
           << r.ms_mean << std::setw(14) << r.flops << std::setw(14) << std::setprecision(6)
           << r.ms_per_mflop;
        if (r.timer_warning) os << "  (! timer resolution)";
        os << "\n";
        os.unsetf(std::ios::fixed);
      }
      os << "# threads=" << report.threads << " precision=" << dtype_name(report.precision)
         << "\n";
      break;
    }
    case ReportFormat::Csv: {
      os << "name,time_ms_median,time_ms_mean,flops,ms_per_mflop\n";
      for (const auto& r : report.records)
        os << r.name << "," << r.ms_median << "," << r.ms_mean << "," << r.flops << ","
           << r.ms_per_mflop << "\n";
      break;
    }
    case ReportFormat::Json: {
      nlohmann::json j;
      j["environment"] = {{"threads", report.threads},
                          {"precision", dtype_name(report.precision)}};
      j["layers"] = nlohmann::json::array();
      for (const auto& r : report.records) {
        j["layers"].push_back({{"name", r.name},
                               {"time_ms_median", r.ms_median},
                               {"time_ms_mean", r.ms_mean},
                               {"flops", r.flops},
                               {"ms_per_mflop", r.ms_per_mflop},
                               {"repetitions", r.repetitions},
                               {"warmup", r.warmup},
                               {"timer_warning", r.timer_warning},
                               {"input", {{"channels", r.input.channels},
                                          {"out_channels", r.input.out_channels},
                                          {"side", r.input.side}}}});
      }
      os << j.dump(2) << "\n";
      break;
    }
  }
  return os.str();
}

}  // namespace asl
