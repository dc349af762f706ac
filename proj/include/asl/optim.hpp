#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "asl/layers.hpp"

namespace asl {

/// Iteration-indexed learning-rate schedules.
struct LrSchedule {
  enum class Kind { Constant, Step, Linear };

  Kind kind = Kind::Constant;
  double base = 0.1;
  std::vector<Index> milestones;  // Step: multiply by gamma once iter reaches each
  double gamma = 0.1;
  Index total_iters = 0;  // Linear: decay to zero at this iteration

  double at(Index iter) const {
    switch (kind) {
      case Kind::Constant:
        return base;
      case Kind::Step: {
        double lr = base;
        for (Index m : milestones)
          if (iter >= m) lr *= gamma;
        return lr;
      }
      case Kind::Linear: {
        if (total_iters <= 0) return base;
        const double f = 1.0 - double(iter) / double(total_iters);
        return base * std::max(f, 0.0);
      }
    }
    return base;
  }

  static LrSchedule constant(double lr) { return {Kind::Constant, lr, {}, 0.1, 0}; }
  static LrSchedule step(double base, std::vector<Index> milestones, double gamma = 0.1) {
    return {Kind::Step, base, std::move(milestones), gamma, 0};
  }
  static LrSchedule linear(double base, Index total) {
    return {Kind::Linear, base, {}, 0.1, total};
  }
};

struct SgdConfig {
  LrSchedule schedule = LrSchedule::step(0.1, {32'000, 48'000});
  double momentum = 0.9;
  double weight_decay = 1e-4;
  // Shift parameters follow the normalized-gradient rule with their own rate,
  // scaled in lockstep with the main schedule. No momentum, no weight decay.
  double shift_lr = 1e-2;
  bool shift_normalize_per_pair = false;
  double shift_norm_eps = 1e-12;
};

/// SGD with momentum and weight decay for dense parameters, plus the
/// normalized-gradient update for shift parameters:
///   v <- momentum * v + g + wd * p;  p <- p - lr * v
///   theta <- theta - lr_shift * g / (||g||_2 + eps)
template <typename Scalar>
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<ParamRef<Scalar>> params, SgdConfig config)
      : params_(std::move(params)), config_(config) {
    velocities_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (needs_velocity(params_[i]))
        velocities_[i] = Vec<Scalar>::Zero(params_[i].size);
  }

  const SgdConfig& config() const { return config_; }

  double learning_rate(Index iter) const { return config_.schedule.at(iter); }

  double shift_learning_rate(Index iter) const {
    const double base = config_.schedule.base;
    const double scale = (base > 0.0) ? config_.schedule.at(iter) / base : 1.0;
    return config_.shift_lr * scale;
  }

  void step(Index iter) {
    const double lr = learning_rate(iter);
    const double shift_lr = shift_learning_rate(iter);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      ParamRef<Scalar>& p = params_[i];
      if (!p.trainable) continue;
      auto value = p.value_vec();
      auto grad = p.grad_vec();

      if (p.kind == ParamKind::Shift) {
        if (config_.shift_normalize_per_pair) {
          const Index c = p.size / 2;
          for (Index j = 0; j < c; ++j) {
            const double ga = double(grad[j]), gb = double(grad[c + j]);
            const double norm = std::sqrt(ga * ga + gb * gb) + config_.shift_norm_eps;
            value[j] -= Scalar(shift_lr * ga / norm);
            value[c + j] -= Scalar(shift_lr * gb / norm);
          }
        } else {
          const double norm =
              grad.template cast<double>().norm() + config_.shift_norm_eps;
          value -= (shift_lr / norm * grad.template cast<double>()).template cast<Scalar>();
        }
        continue;
      }

      const double wd = (p.kind == ParamKind::Weight) ? config_.weight_decay : 0.0;
      Vec<Scalar>& v = velocities_[i];
      v = Scalar(config_.momentum) * v + grad + Scalar(wd) * value;
      value -= Scalar(lr) * v;
    }
  }

  /// Velocity buffers for checkpointing, named after their parameters.
  std::vector<ParamRef<Scalar>> velocity_refs() {
    std::vector<ParamRef<Scalar>> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (velocities_[i].size() == 0) continue;
      out.push_back({"opt.v." + params_[i].name, params_[i].kind, false,
                     velocities_[i].data(), nullptr, velocities_[i].size(),
                     {velocities_[i].size()}});
    }
    return out;
  }

 private:
  static bool needs_velocity(const ParamRef<Scalar>& p) {
    return p.kind != ParamKind::Shift;
  }

  std::vector<ParamRef<Scalar>> params_;
  std::vector<Vec<Scalar>> velocities_;
  SgdConfig config_;
};

}  // namespace asl
