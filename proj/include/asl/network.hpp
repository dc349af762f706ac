#pragma once

#include <memory>
#include <string>
#include <vector>

#include "asl/layers.hpp"

namespace asl {

/// A classification network: a layer tree plus a softmax cross-entropy head.
template <typename Scalar>
class Network {
 public:
  Network() = default;
  explicit Network(LayerPtr<Scalar> body) : body_(std::move(body)) {}

  Layer<Scalar>& body() { return *body_; }
  const Layer<Scalar>& body() const { return *body_; }

  struct ForwardResult {
    Tensor4<Scalar> logits;
    double loss = 0.0;
  };

  ForwardResult forward(const Tensor4<Scalar>& batch, const std::vector<int>& labels,
                        bool training) {
    ForwardResult res;
    res.logits = body_->forward(batch, training);
    res.loss = head_.forward(res.logits, labels);
    forward_done_ = true;
    return res;
  }

  /// Inference only; leaves no backward state.
  Tensor4<Scalar> logits(const Tensor4<Scalar>& batch, bool training = false) {
    return body_->forward(batch, training);
  }

  /// Fills gradient buffers for all trainable parameters via the chain rule.
  void backward(double loss_scale = 1.0) {
    if (!forward_done_) throw StateError("network backward before forward");
    body_->backward(head_.backward(loss_scale));
    forward_done_ = false;
  }

  std::vector<ParamRef<Scalar>> params() {
    std::vector<ParamRef<Scalar>> out;
    body_->collect_params(out);
    return out;
  }

  std::vector<ParamRef<Scalar>> state() {
    std::vector<ParamRef<Scalar>> out;
    body_->collect_state(out);
    return out;
  }

  void zero_grads() {
    for (auto& p : params())
      if (p.grad) p.grad_vec().setZero();
  }

  Index param_count() {
    Index total = 0;
    for (auto& p : params()) total += p.size;
    return total;
  }

  Index shift_param_count() {
    Index total = 0;
    for (auto& p : params())
      if (p.kind == ParamKind::Shift) total += p.size;
    return total;
  }

  /// Marks every batch-norm layer as holding usable statistics (after a
  /// checkpoint restore).
  void mark_bn_stats_loaded() {
    visit_layers<Scalar>(*body_, [](Layer<Scalar>& layer) {
      if (auto* bn = dynamic_cast<BatchNorm<Scalar>*>(&layer)) bn->set_has_stats(true);
    });
  }

 private:
  LayerPtr<Scalar> body_;
  SoftmaxXent<Scalar> head_;
  bool forward_done_ = false;
};

}  // namespace asl
