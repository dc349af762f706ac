#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "asl/checkpoint.hpp"
#include "asl/data.hpp"
#include "asl/models.hpp"
#include "asl/network.hpp"
#include "asl/optim.hpp"

namespace asl {

struct EvalReport {
  double top1 = 0.0;
  double top5 = 0.0;  // only meaningful when classes >= 5
  Index examples = 0;
};

/// Top-1/top-5 accuracy of a network over a dataset, eval-mode batch norm.
template <typename Scalar>
EvalReport evaluate_network(Network<Scalar>& net, const CifarDataset& data,
                            DatasetSpec spec) {
  spec.augment = false;
  BatchStream<Scalar> stream(data, spec);
  const Index batches = (data.size() + spec.batch_size - 1) / spec.batch_size;
  EvalReport report;
  Index hit1 = 0, hit5 = 0;
  const bool want_top5 = data.num_classes() >= 5;
  for (Index b = 0; b < batches; ++b) {
    auto batch = stream.eval_batch(b);
    auto logits = net.logits(batch.images, /*training=*/false);
    for (Index n = 0; n < logits.batch(); ++n) {
      const int label = batch.labels[std::size_t(n)];
      const Scalar own = logits(n, label, 0, 0);
      Index better = 0;
      for (Index c = 0; c < logits.channels(); ++c)
        if (logits(n, c, 0, 0) > own) ++better;
      if (better == 0) ++hit1;
      if (want_top5 && better < 5) ++hit5;
    }
    report.examples += logits.batch();
  }
  report.top1 = double(hit1) / double(report.examples);
  report.top5 = want_top5 ? double(hit5) / double(report.examples) : report.top1;
  return report;
}

/// Iteration-driven training loop with deterministic batching, periodic
/// evaluation and binary checkpoints.
template <typename Scalar>
class Trainer {
 public:
  struct Options {
    SgdConfig optimizer;
    Index log_interval = 100;
    Index eval_interval = 2'000;
    Index checkpoint_interval = 4'000;
    std::string checkpoint_dir;
    std::ostream* log = nullptr;
  };

  Trainer(Network<Scalar>&& net, const CifarDataset& train_data,
          const CifarDataset& test_data, DatasetSpec stream_spec, Options options)
      : net_(std::move(net)),
        options_(std::move(options)),
        train_data_(&train_data),
        test_data_(&test_data),
        train_stream_(train_data, stream_spec),
        test_spec_(stream_spec) {
    test_spec_.augment = false;
    test_spec_.split = "test";
    opt_ = std::make_unique<SgdOptimizer<Scalar>>(net_.params(), options_.optimizer);
  }

  Network<Scalar>& network() { return net_; }
  Index iteration() const { return iteration_; }
  const std::vector<double>& loss_history() const { return losses_; }

  /// Runs until `total_iterations` (absolute, so resumed runs continue).
  void run(Index total_iterations) {
    while (iteration_ < total_iterations) {
      const Index iter = iteration_;
      auto batch = train_stream_.batch_at(iter);
      net_.zero_grads();
      const auto out = net_.forward(batch.images, batch.labels, /*training=*/true);
      net_.backward();
      opt_->step(iter);
      ++iteration_;
      losses_.push_back(out.loss);

      if (options_.log && options_.log_interval > 0 &&
          (iteration_ % options_.log_interval == 0 || iteration_ == total_iterations)) {
        (*options_.log) << "iter=" << iteration_ << " loss=" << out.loss
                        << " lr=" << opt_->learning_rate(iter) << "\n";
      }
      if (options_.eval_interval > 0 && iteration_ % options_.eval_interval == 0) {
        const auto report = evaluate();
        if (options_.log)
          (*options_.log) << "iter=" << iteration_ << " test_top1=" << report.top1 << "\n";
      }
      if (!options_.checkpoint_dir.empty() && options_.checkpoint_interval > 0 &&
          iteration_ % options_.checkpoint_interval == 0) {
        save_checkpoint_file(checkpoint_path(iteration_));
      }
    }
  }

  /// Top-1/top-5 accuracy over the test split. If the network has never seen
  /// a training batch, its normalization statistics are first primed from a
  /// few training batches (no optimizer step).
  EvalReport evaluate() {
    prime_bn_stats_if_needed();
    return evaluate_network(net_, *test_data_, test_spec_);
  }

  std::string checkpoint_path(Index iter) const {
    return (std::filesystem::path(options_.checkpoint_dir) /
            ("ckpt_" + std::to_string(iter) + ".bin"))
        .string();
  }

  void save_checkpoint_file(const std::string& path) {
    namespace fs = std::filesystem;
    if (const auto dir = fs::path(path).parent_path(); !dir.empty())
      fs::create_directories(dir);
    std::vector<CheckpointEntry> entries;
    for (auto& p : net_.params()) entries.push_back(to_entry(p));
    for (auto& p : net_.state()) entries.push_back(to_entry(p));
    for (auto& p : opt_->velocity_refs()) entries.push_back(to_entry(p));
    entries.push_back(scalar_entry("trainer.iteration", iteration_));
    save_checkpoint(path, entries);
  }

  void load_checkpoint_file(const std::string& path) {
    auto entries = load_checkpoint(path);
    auto find = [&](const std::string& name) -> const CheckpointEntry* {
      for (const auto& e : entries)
        if (e.name == name) return &e;
      return nullptr;
    };
    auto restore_all = [&](std::vector<ParamRef<Scalar>> refs) {
      for (auto& p : refs) {
        const CheckpointEntry* e = find(p.name);
        if (!e) throw FormatError("checkpoint is missing entry '" + p.name + "'");
        restore_into(*e, p);
      }
    };
    restore_all(net_.params());
    restore_all(net_.state());
    restore_all(opt_->velocity_refs());
    const CheckpointEntry* it = find("trainer.iteration");
    if (!it) throw FormatError("checkpoint is missing entry 'trainer.iteration'");
    std::int64_t iter = 0;
    std::memcpy(&iter, it->bytes.data(), 8);
    iteration_ = Index(iter);
    net_.mark_bn_stats_loaded();
    bn_primed_ = true;
  }

  /// Final metrics as a stable-schema JSON object.
  nlohmann::json metrics(double elapsed_seconds) {
    const auto report = evaluate();
    nlohmann::json j;
    j["iterations"] = iteration_;
    j["test_top1"] = report.top1;
    j["test_top5"] = report.top5;
    j["test_examples"] = report.examples;
    j["train_loss_last"] = losses_.empty() ? 0.0 : losses_.back();
    // counts include BN affine terms and shift parameters; BN running
    // statistics are excluded
    j["param_count"] = net_.param_count();
    j["shift_param_count"] = net_.shift_param_count();
    j["weight_param_count"] = net_.param_count() - net_.shift_param_count();
    j["elapsed_seconds"] = elapsed_seconds;
    j["precision"] = dtype_name(dtype_of<Scalar>());
    return j;
  }

 private:
  void prime_bn_stats_if_needed() {
    if (bn_primed_ || iteration_ > 0) return;
    for (Index b = 0; b < 2; ++b) {
      auto batch = train_stream_.batch_at(b);
      (void)net_.logits(batch.images, /*training=*/true);
    }
    bn_primed_ = true;
  }

  Network<Scalar> net_;
  Options options_;
  const CifarDataset* train_data_;
  const CifarDataset* test_data_;
  BatchStream<Scalar> train_stream_;
  DatasetSpec test_spec_;
  std::unique_ptr<SgdOptimizer<Scalar>> opt_;
  Index iteration_ = 0;
  std::vector<double> losses_;
  bool bn_primed_ = false;
};

}  // namespace asl
