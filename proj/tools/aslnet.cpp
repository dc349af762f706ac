// aslnet: training, evaluation, verification and benchmarking for networks
// built from pointwise convolutions and learnable channel shifts.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "asl/bench.hpp"
#include "asl/data.hpp"
#include "asl/models.hpp"
#include "asl/parallel.hpp"
#include "asl/train.hpp"
#include "asl/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitDataset = 2;
constexpr int kExitCheckpoint = 3;
constexpr int kExitSuite = 4;

struct GlobalOpts {
  std::uint64_t seed = 1;
  int threads = 1;
  std::string precision = "float32";
  std::string data_root;
};

struct TrainArgs {
  std::string config_path;
  std::string save_config_path;
  std::string source = "cifar10";
  std::string init_override;
  bool freeze_shift = false;
  long iterations = 64'000;
  double lr = 0.1;
  std::vector<long> milestones = {32'000, 48'000};
  std::string schedule = "step";
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double shift_lr = 1e-2;
  long batch = 128;
  bool no_augment = false;
  std::string ckpt_dir;
  long ckpt_interval = 4'000;
  long eval_interval = 2'000;
  long log_interval = 100;
  std::string metrics_path = "metrics.json";
  std::string resume_path;
};

struct EvalArgs {
  std::string config_path;
  std::string checkpoint;
  std::string source = "cifar10";
  std::string split = "test";
  long batch = 128;
};

struct CheckArgs {
  int cases = 50;
  bool self_test_fault = false;
};

struct BenchArgs {
  bool table1 = false;
  std::vector<std::string> layers;
  int reps = 100;
  int warmup = 10;
  long side = 224;
  long channels = 64;
  long out_channels = 64;
  std::string format = "text";
  std::string out_path;
};

struct ExportArgs {
  std::string config_path;
  std::string checkpoint;
  std::string out_path;
};

asl::NetworkConfig effective_config(const std::string& config_path,
                                    const std::string& init_override, bool freeze_shift) {
  asl::NetworkConfig cfg;
  if (!config_path.empty()) cfg = asl::load_network_config(config_path);
  if (!init_override.empty()) cfg.init = asl::detail::parse_init(init_override);
  if (freeze_shift) cfg.shift_trainable = false;
  return cfg;
}

asl::DatasetSpec::Source parse_source(const std::string& s) {
  if (s == "cifar10") return asl::DatasetSpec::Source::Cifar10;
  if (s == "cifar100") return asl::DatasetSpec::Source::Cifar100;
  throw asl::ConfigError("unknown dataset source '" + s + "'");
}

template <typename Scalar>
int run_train(const TrainArgs& args, const GlobalOpts& g) {
  asl::NetworkConfig cfg = effective_config(args.config_path, args.init_override,
                                            args.freeze_shift);
  if (!args.save_config_path.empty()) asl::save_network_config(args.save_config_path, cfg);

  asl::DatasetSpec spec;
  spec.source = parse_source(args.source);
  spec.root = asl::resolve_data_root(g.data_root);
  spec.batch_size = args.batch;
  spec.augment = !args.no_augment;
  spec.seed = g.seed;
  if (spec.source == asl::DatasetSpec::Source::Cifar100) cfg.classes = 100;

  asl::CifarDataset train_data, test_data;
  try {
    spec.split = "train";
    train_data = asl::CifarDataset::load(spec);
    asl::DatasetSpec test_spec = spec;
    test_spec.split = "test";
    test_data = asl::CifarDataset::load(test_spec);
  } catch (const asl::FormatError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kExitDataset;
  }
  test_data.set_stats(train_data.stats());  // normalize both splits alike

  asl::SgdConfig opt;
  if (args.schedule == "step")
    opt.schedule = asl::LrSchedule::step(args.lr, {args.milestones.begin(), args.milestones.end()});
  else if (args.schedule == "linear")
    opt.schedule = asl::LrSchedule::linear(args.lr, args.iterations);
  else if (args.schedule == "constant")
    opt.schedule = asl::LrSchedule::constant(args.lr);
  else
    throw asl::ConfigError("unknown schedule '" + args.schedule + "'");
  opt.momentum = args.momentum;
  opt.weight_decay = args.weight_decay;
  opt.shift_lr = args.shift_lr;

  typename asl::Trainer<Scalar>::Options topt;
  topt.optimizer = opt;
  topt.log_interval = args.log_interval;
  topt.eval_interval = args.eval_interval;
  topt.checkpoint_interval = args.ckpt_interval;
  topt.checkpoint_dir = args.ckpt_dir;
  topt.log = &std::cout;

  asl::Trainer<Scalar> trainer(asl::build_network<Scalar>(cfg, g.seed), train_data,
                               test_data, spec, topt);
  if (!args.resume_path.empty()) trainer.load_checkpoint_file(args.resume_path);

  const auto t0 = std::chrono::steady_clock::now();
  trainer.run(args.iterations);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  auto metrics = trainer.metrics(elapsed);
  metrics["seed"] = g.seed;
  metrics["family"] = asl::family_name(cfg.family);
  metrics["threads"] = asl::num_threads();
  std::ofstream os(args.metrics_path);
  if (!os) throw asl::ConfigError("cannot write metrics file: " + args.metrics_path);
  os << metrics.dump(2) << "\n";
  std::cout << "test_top1=" << metrics["test_top1"] << " params=" << metrics["param_count"]
            << " metrics=" << args.metrics_path << "\n";
  if (!args.ckpt_dir.empty()) trainer.save_checkpoint_file(trainer.checkpoint_path(trainer.iteration()));
  return kExitOk;
}

template <typename Scalar>
int run_eval(const EvalArgs& args, const GlobalOpts& g) {
  asl::NetworkConfig cfg = effective_config(args.config_path, "", false);
  asl::DatasetSpec spec;
  spec.source = parse_source(args.source);
  spec.root = asl::resolve_data_root(g.data_root);
  spec.split = args.split;
  spec.batch_size = args.batch;
  if (spec.source == asl::DatasetSpec::Source::Cifar100) cfg.classes = 100;

  asl::CifarDataset data;
  try {
    data = asl::CifarDataset::load(spec);
  } catch (const asl::FormatError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kExitDataset;
  }

  auto net = asl::build_network<Scalar>(cfg, g.seed);
  try {
    auto entries = asl::load_checkpoint(args.checkpoint);
    auto restore_group = [&](std::vector<asl::ParamRef<Scalar>> refs) {
      for (auto& p : refs) {
        bool found = false;
        for (const auto& e : entries)
          if (e.name == p.name) {
            asl::restore_into(e, p);
            found = true;
            break;
          }
        if (!found) throw asl::ShapeError("checkpoint is missing entry '" + p.name + "'");
      }
    };
    restore_group(net.params());
    restore_group(net.state());
    net.mark_bn_stats_loaded();
  } catch (const asl::ShapeError& e) {
    std::cerr << "checkpoint mismatch: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const asl::FormatError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  }

  const auto report = asl::evaluate_network(net, data, spec);
  nlohmann::json j{{"split", args.split},
                   {"top1", report.top1},
                   {"top5", report.top5},
                   {"examples", report.examples}};
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int print_suites(const std::vector<asl::SuiteResult>& suites) {
  bool all_pass = true;
  for (const auto& s : suites) {
    std::cout << "suite=" << s.name << " max_err=" << s.max_err << " tol=" << s.tolerance
              << (s.pass ? " PASS" : " FAIL");
    if (!s.pass) std::cout << " replay_seed=" << s.fail_seed;
    if (!s.detail.empty()) std::cout << " at=" << s.detail;
    std::cout << "\n";
    all_pass = all_pass && s.pass;
  }
  return all_pass ? kExitOk : kExitSuite;
}

int run_gradcheck(const CheckArgs& args, const GlobalOpts& g) {
  const auto fault = args.self_test_fault ? asl::GradFault::FlipAlphaSign
                                          : asl::GradFault::None;
  std::vector<asl::SuiteResult> suites;
  suites.push_back(asl::run_asl_gradient_suite(args.cases, 1e-4, g.seed * 1000 + 1, fault));
  suites.push_back(asl::run_adjointness_suite(args.cases, 1e-10, g.seed * 1000 + 2));
  suites.push_back(asl::run_network_gradcheck(1e-3, g.seed * 1000 + 3));
  return print_suites(suites);
}

int run_oracle(const CheckArgs& args, const GlobalOpts& g) {
  std::vector<asl::SuiteResult> suites;
  suites.push_back(asl::run_decomposition_suite<float>(100, 1e-5, g.seed * 100 + 1));
  suites.push_back(asl::run_decomposition_suite<double>(100, 1e-12, g.seed * 100 + 2));
  suites.push_back(asl::run_collapse_suite<float>(100, 1e-5, g.seed * 100 + 3));
  suites.push_back(asl::run_collapse_suite<double>(100, 1e-12, g.seed * 100 + 4));
  const auto fault = args.self_test_fault ? asl::GradFault::FlipAlphaSign
                                          : asl::GradFault::None;
  suites.push_back(asl::run_asl_gradient_suite(args.cases, 1e-4, g.seed * 100 + 5, fault));
  suites.push_back(asl::run_adjointness_suite(args.cases, 1e-10, g.seed * 100 + 6));
  suites.push_back(asl::run_network_gradcheck(1e-3, g.seed * 100 + 7));
  return print_suites(suites);
}

int run_bench(const BenchArgs& args, const GlobalOpts& g) {
  if (g.threads != 1)
    throw asl::UsageError("bench requires --threads 1 (measurement is single-threaded)");
  std::vector<asl::BenchKind> kinds;
  if (args.table1 || args.layers.empty()) {
    kinds = asl::table1_layers();
  } else {
    for (const auto& name : args.layers) kinds.push_back(asl::parse_bench_kind(name));
  }
  asl::BenchInputSpec in;
  in.side = args.side;
  in.channels = args.channels;
  in.out_channels = args.out_channels;

  asl::BenchReport report;
  report.threads = asl::num_threads();
  report.precision = asl::DType::Float32;
  for (asl::BenchKind k : kinds)
    report.records.push_back(asl::bench_layer(k, in, args.reps, args.warmup));

  const std::string text = asl::emit_report(report, asl::parse_report_format(args.format));
  if (args.out_path.empty()) {
    std::cout << text;
  } else {
    std::ofstream os(args.out_path);
    if (!os) throw asl::UsageError("cannot write report: " + args.out_path);
    os << text;
  }
  return kExitOk;
}

template <typename Scalar>
int run_export_shifts(const ExportArgs& args, const GlobalOpts& g) {
  asl::NetworkConfig cfg = effective_config(args.config_path, "", false);
  auto net = asl::build_network<Scalar>(cfg, g.seed);
  if (!args.checkpoint.empty()) {
    try {
      auto entries = asl::load_checkpoint(args.checkpoint);
      for (auto& p : net.params()) {
        for (const auto& e : entries)
          if (e.name == p.name) {
            asl::restore_into(e, p);
            break;
          }
      }
    } catch (const asl::ShapeError& e) {
      std::cerr << "checkpoint mismatch: " << e.what() << "\n";
      return kExitCheckpoint;
    }
  }

  std::ostringstream csv;
  csv << "layer,channel,alpha,beta\n";
  asl::visit_layers<Scalar>(net.body(), [&](asl::Layer<Scalar>& layer) {
    if (auto* shift = dynamic_cast<asl::ActiveShift<Scalar>*>(&layer)) {
      const auto& sp = shift->shift();
      for (asl::Index c = 0; c < sp.channels(); ++c)
        csv << layer.name() << "," << c << "," << sp.alpha(c) << "," << sp.beta(c) << "\n";
    }
  });
  if (args.out_path.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream os(args.out_path);
    if (!os) throw asl::UsageError("cannot write csv: " + args.out_path);
    os << csv.str();
  }
  return kExitOk;
}

template <typename FnF, typename FnD>
int dispatch_precision(const std::string& precision, FnF&& f32, FnD&& f64) {
  if (precision == "float32") return f32();
  if (precision == "float64") return f64();
  throw asl::UsageError("unknown precision '" + precision + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shift-based network kit: deconstructed convolutions, learnable "
               "channel shifts, training, verification and layer benchmarks"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--seed", g.seed, "Master RNG seed");
  app.add_option("--threads", g.threads, "Worker threads for batch-parallel kernels");
  app.add_option("--precision", g.precision, "float32 or float64")
      ->check(CLI::IsMember({"float32", "float64"}));
  app.add_option("--data-root", g.data_root,
                 "Dataset root directory (or set ASL_DATA_ROOT)");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a network");
  train->add_option("--config", train_args.config_path, "Network config file");
  train->add_option("--save-config", train_args.save_config_path,
                    "Write the effective network config to this path");
  train->add_option("--source", train_args.source, "cifar10 or cifar100")
      ->check(CLI::IsMember({"cifar10", "cifar100"}));
  train->add_option("--init", train_args.init_override,
                    "Shift init override: grouped, int-normal, real-normal, uniform")
      ->check(CLI::IsMember({"grouped", "int-normal", "real-normal", "uniform"}));
  train->add_flag("--freeze-shift", train_args.freeze_shift, "Do not train shift values");
  train->add_option("--iters", train_args.iterations, "Total iterations");
  train->add_option("--lr", train_args.lr, "Base learning rate");
  train->add_option("--milestones", train_args.milestones, "Step-schedule milestones");
  train->add_option("--schedule", train_args.schedule, "step, linear or constant")
      ->check(CLI::IsMember({"step", "linear", "constant"}));
  train->add_option("--momentum", train_args.momentum, "SGD momentum");
  train->add_option("--wd", train_args.weight_decay, "Weight decay");
  train->add_option("--shift-lr", train_args.shift_lr, "Shift learning rate");
  train->add_option("--batch", train_args.batch, "Batch size");
  train->add_flag("--no-augment", train_args.no_augment, "Disable augmentation");
  train->add_option("--ckpt-dir", train_args.ckpt_dir, "Checkpoint directory");
  train->add_option("--ckpt-interval", train_args.ckpt_interval, "Iterations per checkpoint");
  train->add_option("--eval-interval", train_args.eval_interval, "Iterations per evaluation");
  train->add_option("--log-interval", train_args.log_interval, "Iterations per log line");
  train->add_option("--metrics", train_args.metrics_path, "Metrics JSON output path");
  train->add_option("--resume", train_args.resume_path, "Checkpoint to resume from");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--config", eval_args.config_path, "Network config file");
  eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint path")->required();
  eval->add_option("--source", eval_args.source, "cifar10 or cifar100")
      ->check(CLI::IsMember({"cifar10", "cifar100"}));
  eval->add_option("--split", eval_args.split, "test or train")
      ->check(CLI::IsMember({"test", "train"}));
  eval->add_option("--batch", eval_args.batch, "Batch size");

  CheckArgs check_args;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  gradcheck->add_option("--cases", check_args.cases, "Random cases per suite");
  gradcheck->add_flag("--self-test-fault", check_args.self_test_fault)->group("");

  CheckArgs oracle_args;
  auto* oracle = app.add_subcommand("oracle", "All reference-identity suites");
  oracle->add_option("--cases", oracle_args.cases, "Random cases per suite");
  oracle->add_flag("--self-test-fault", oracle_args.self_test_fault)->group("");

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Per-layer wall-time vs FLOPs microbenchmark");
  bench->add_flag("--table1", bench_args.table1,
                  "Benchmark the standard 64-channel 224x224 layer set");
  bench->add_option("--layers", bench_args.layers,
                    "Layer names (dwconv3x3, conv1x1, bn_affine, relu, eltwise_sum, asl)");
  bench->add_option("--reps", bench_args.reps, "Timed repetitions");
  bench->add_option("--warmup", bench_args.warmup, "Warmup repetitions (excluded)");
  bench->add_option("--side", bench_args.side, "Input spatial side");
  bench->add_option("--channels", bench_args.channels, "Input channels");
  bench->add_option("--out-channels", bench_args.out_channels, "1x1 conv output channels");
  bench->add_option("--format", bench_args.format, "text, csv or json")
      ->check(CLI::IsMember({"text", "csv", "json"}));
  bench->add_option("--out", bench_args.out_path, "Write the report to a file");

  ExportArgs export_args;
  auto* exports = app.add_subcommand("export-shifts",
                                     "Dump per-layer (alpha, beta) pairs as CSV");
  exports->add_option("--config", export_args.config_path, "Network config file");
  exports->add_option("--checkpoint", export_args.checkpoint, "Checkpoint path");
  exports->add_option("--out", export_args.out_path, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    asl::set_num_threads(g.threads);
    if (train->parsed())
      return dispatch_precision(g.precision,
                                [&] { return run_train<float>(train_args, g); },
                                [&] { return run_train<double>(train_args, g); });
    if (eval->parsed())
      return dispatch_precision(g.precision,
                                [&] { return run_eval<float>(eval_args, g); },
                                [&] { return run_eval<double>(eval_args, g); });
    if (gradcheck->parsed()) return run_gradcheck(check_args, g);
    if (oracle->parsed()) return run_oracle(oracle_args, g);
    if (bench->parsed()) return run_bench(bench_args, g);
    if (exports->parsed())
      return dispatch_precision(g.precision,
                                [&] { return run_export_shifts<float>(export_args, g); },
                                [&] { return run_export_shifts<double>(export_args, g); });
  } catch (const asl::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const asl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
