#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "asl/conv.hpp"
#include "asl/shift.hpp"
#include "asl/tensor.hpp"

namespace asl {

enum class ParamKind : std::uint8_t { Weight, Bias, BnAffine, Shift };

/// Non-owning view of one parameter tensor and its gradient buffer.
template <typename Scalar>
struct ParamRef {
  std::string name;
  ParamKind kind = ParamKind::Weight;
  bool trainable = true;
  Scalar* value = nullptr;
  Scalar* grad = nullptr;
  Index size = 0;
  std::vector<Index> dims;

  Eigen::Map<Vec<Scalar>> value_vec() const { return {value, size}; }
  Eigen::Map<Vec<Scalar>> grad_vec() const { return {grad, size}; }
};

template <typename Scalar>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  virtual Tensor4<Scalar> forward(const Tensor4<Scalar>& x, bool training) = 0;
  virtual Tensor4<Scalar> backward(const Tensor4<Scalar>& grad_out) = 0;

  /// Trainable/affine parameters, in a stable order.
  virtual void collect_params(std::vector<ParamRef<Scalar>>&) {}
  /// Non-trained state that belongs in checkpoints (BN running stats).
  virtual void collect_state(std::vector<ParamRef<Scalar>>&) {}
  virtual std::vector<Layer<Scalar>*> children() { return {}; }

  virtual const char* kind() const = 0;
  const std::string& name() const { return name_; }

 protected:
  void require(bool ok, const char* what) const {
    if (!ok) throw StateError(name_ + ": " + what);
  }
  [[noreturn]] void shape_fail(const std::string& msg) const {
    throw ShapeError(name_ + ": " + msg);
  }

  std::string name_;
};

template <typename Scalar>
using LayerPtr = std::unique_ptr<Layer<Scalar>>;

/// Pre-order traversal over a layer tree.
template <typename Scalar>
void visit_layers(Layer<Scalar>& root, const std::function<void(Layer<Scalar>&)>& fn) {
  fn(root);
  for (Layer<Scalar>* child : root.children()) visit_layers(*child, fn);
}

// ---------------------------------------------------------------------------
// Pointwise (1x1) convolution, one GEMM per batch item.
// ---------------------------------------------------------------------------
template <typename Scalar>
class Conv1x1 : public Layer<Scalar> {
 public:
  template <typename Rng>
  Conv1x1(std::string name, Index in_channels, Index out_channels, Index stride, Rng& rng)
      : Layer<Scalar>(std::move(name)),
        stride_(stride),
        weight_(out_channels, in_channels),
        grad_(Mat<Scalar>::Zero(out_channels, in_channels)) {
    // He initialization; fan-in is the channel count for a 1x1 kernel.
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(in_channels)));
    for (Index d = 0; d < out_channels; ++d)
      for (Index c = 0; c < in_channels; ++c) weight_(d, c) = Scalar(dist(rng));
  }

  const char* kind() const override { return "conv1x1"; }
  Index stride() const { return stride_; }
  Mat<Scalar>& weight() { return weight_; }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, bool) override {
    if (x.channels() != weight_.cols())
      this->shape_fail("expected " + std::to_string(weight_.cols()) + " channels, got " +
                       x.shape().str());
    input_ = x;
    have_forward_ = true;
    return conv_pointwise(x, weight_, stride_);
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) override {
    this->require(have_forward_, "backward before forward");
    const Index ho = g.height(), wo = g.width();
    Tensor4<Scalar> gx(input_.shape());
    if (stride_ == 1) {
      for (Index n = 0; n < g.batch(); ++n) {
        grad_.noalias() += g.channel_matrix(n) * input_.channel_matrix(n).transpose();
        gx.channel_matrix(n).noalias() = weight_.transpose() * g.channel_matrix(n);
      }
      return gx;
    }
    for (Index n = 0; n < g.batch(); ++n) {
      Mat<Scalar> sub(input_.channels(), ho * wo);
      for (Index c = 0; c < input_.channels(); ++c)
        for (Index m = 0; m < ho; ++m)
          for (Index p = 0; p < wo; ++p)
            sub(c, m * wo + p) = input_(n, c, m * stride_, p * stride_);
      grad_.noalias() += g.channel_matrix(n) * sub.transpose();
      Mat<Scalar> hx = weight_.transpose() * g.channel_matrix(n);
      for (Index c = 0; c < input_.channels(); ++c)
        for (Index m = 0; m < ho; ++m)
          for (Index p = 0; p < wo; ++p)
            gx(n, c, m * stride_, p * stride_) = hx(c, m * wo + p);
    }
    return gx;
  }

  void collect_params(std::vector<ParamRef<Scalar>>& out) override {
    out.push_back({this->name_ + ".weight", ParamKind::Weight, true, weight_.data(),
                   grad_.data(), weight_.size(), {weight_.rows(), weight_.cols()}});
  }

 private:
  Index stride_;
  Mat<Scalar> weight_, grad_;
  Tensor4<Scalar> input_;
  bool have_forward_ = false;
};

// ---------------------------------------------------------------------------
// Full spatial convolution, evaluated as a sum of shifted pointwise products.
// Used for network stems; the decomposition keeps it on the GEMM path.
// ---------------------------------------------------------------------------
template <typename Scalar>
class Conv2d : public Layer<Scalar> {
 public:
  template <typename Rng>
  Conv2d(std::string name, Index in_channels, Index out_channels, Index kernel_side,
         Index stride, Index pad, Rng& rng)
      : Layer<Scalar>(std::move(name)),
        spec_{.out_channels = out_channels,
              .in_channels = in_channels,
              .kernel = kernel_side * kernel_side,
              .stride = stride,
              .pad = pad},
        weight_(out_channels, in_channels, kernel_side, kernel_side),
        grad_(out_channels, in_channels, kernel_side, kernel_side) {
    const double fan_in = double(in_channels) * double(spec_.kernel);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (Index i = 0; i < weight_.size(); ++i) weight_.data()[i] = Scalar(dist(rng));
  }

  const char* kind() const override { return "conv2d"; }
  const ConvSpec& spec() const { return spec_; }
  Tensor4<Scalar>& weight() { return weight_; }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, bool) override {
    if (x.channels() != spec_.in_channels)
      this->shape_fail("expected " + std::to_string(spec_.in_channels) +
                       " channels, got " + x.shape().str());
    input_ = x;
    have_forward_ = true;
    return decompose_conv(x, weight_, spec_);
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) override {
    this->require(have_forward_, "backward before forward");
    const Index side = spec_.kernel_side();
    const Index recentre = (side - 1) / 2 - spec_.pad;
    const Index ho = g.height(), wo = g.width();
    Tensor4<Scalar> gx(input_.shape());

    for (const KernelOffset& off : kernel_offsets(spec_.kernel)) {
      const KernelOffset adjusted{off.k, off.row + recentre, off.col + recentre};
      Tensor4<Scalar> shifted = shift_integer(input_, adjusted);
      const Mat<Scalar> wk = weight_slice(weight_, off.k);
      Mat<Scalar> gwk = Mat<Scalar>::Zero(wk.rows(), wk.cols());

      // Scatter W_k^T g back to strided positions, then unshift (the adjoint
      // of shift-by-o is shift-by(-o) under zero padding).
      Tensor4<Scalar> up(input_.batch(), input_.channels(), input_.height(), input_.width());
      for (Index n = 0; n < g.batch(); ++n) {
        Mat<Scalar> sub(input_.channels(), ho * wo);
        for (Index c = 0; c < input_.channels(); ++c)
          for (Index m = 0; m < ho; ++m)
            for (Index p = 0; p < wo; ++p)
              sub(c, m * wo + p) = shifted(n, c, m * spec_.stride, p * spec_.stride);
        gwk.noalias() += g.channel_matrix(n) * sub.transpose();
        Mat<Scalar> hx = wk.transpose() * g.channel_matrix(n);
        for (Index c = 0; c < input_.channels(); ++c)
          for (Index m = 0; m < ho; ++m)
            for (Index p = 0; p < wo; ++p)
              up(n, c, m * spec_.stride, p * spec_.stride) = hx(c, m * wo + p);
      }
      gx = eltwise_sum(gx, shift_integer(up, KernelOffset{1, -adjusted.row, -adjusted.col}));

      const Index kr = (off.k - 1) / side, kc = (off.k - 1) % side;
      for (Index d = 0; d < spec_.out_channels; ++d)
        for (Index c = 0; c < spec_.in_channels; ++c) grad_(d, c, kr, kc) += gwk(d, c);
    }
    return gx;
  }

  void collect_params(std::vector<ParamRef<Scalar>>& out) override {
    out.push_back({this->name_ + ".weight", ParamKind::Weight, true, weight_.data(),
                   grad_.data(), weight_.size(),
                   {weight_.batch(), weight_.channels(), weight_.height(), weight_.width()}});
  }

 private:
  ConvSpec spec_;
  Tensor4<Scalar> weight_, grad_;
  Tensor4<Scalar> input_;
  bool have_forward_ = false;
};

// ---------------------------------------------------------------------------
// Depthwise spatial convolution (per-channel stencil, no channel mixing).
// ---------------------------------------------------------------------------
template <typename Scalar>
class DepthwiseConv : public Layer<Scalar> {
 public:
  template <typename Rng>
  DepthwiseConv(std::string name, Index channels, Index kernel_side, Index stride,
                Index pad, Rng& rng)
      : Layer<Scalar>(std::move(name)),
        stride_(stride),
        pad_(pad),
        weight_(channels, 1, kernel_side, kernel_side),
        grad_(channels, 1, kernel_side, kernel_side) {
    const double fan_in = double(kernel_side) * kernel_side;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (Index i = 0; i < weight_.size(); ++i) weight_.data()[i] = Scalar(dist(rng));
  }

  const char* kind() const override { return "dwconv"; }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, bool) override {
    if (x.channels() != weight_.batch())
      this->shape_fail("expected " + std::to_string(weight_.batch()) + " channels, got " +
                       x.shape().str());
    input_ = x;
    have_forward_ = true;
    return conv_depthwise(x, weight_, stride_, pad_);
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) override {
    this->require(have_forward_, "backward before forward");
    const Index side = weight_.height();
    Tensor4<Scalar> gx(input_.shape());
    for (Index n = 0; n < g.batch(); ++n)
      for (Index c = 0; c < g.channels(); ++c)
        for (Index m = 0; m < g.height(); ++m)
          for (Index p = 0; p < g.width(); ++p) {
            const Scalar gv = g(n, c, m, p);
            for (Index kr = 0; kr < side; ++kr)
              for (Index kc = 0; kc < side; ++kc) {
                const Index r = m * stride_ - pad_ + kr;
                const Index q = p * stride_ - pad_ + kc;
                if (r < 0 || r >= input_.height() || q < 0 || q >= input_.width()) continue;
                grad_(c, 0, kr, kc) += gv * input_(n, c, r, q);
                gx(n, c, r, q) += gv * weight_(c, 0, kr, kc);
              }
          }
    return gx;
  }

  void collect_params(std::vector<ParamRef<Scalar>>& out) override {
    out.push_back({this->name_ + ".weight", ParamKind::Weight, true, weight_.data(),
                   grad_.data(), weight_.size(),
                   {weight_.batch(), weight_.channels(), weight_.height(), weight_.width()}});
  }

 private:
  Index stride_, pad_;
  Tensor4<Scalar> weight_, grad_;
  Tensor4<Scalar> input_;
  bool have_forward_ = false;
};

// ---------------------------------------------------------------------------
// Active shift layer: learnable per-channel fractional shift.
// ---------------------------------------------------------------------------
template <typename Scalar>
class ActiveShift : public Layer<Scalar> {
 public:
  ActiveShift(std::string name, ShiftParams<Scalar> params, Index stride = 1)
      : Layer<Scalar>(std::move(name)),
        params_(std::move(params)),
        grad_(Vec<Scalar>::Zero(params_.param_count())),
        stride_(stride) {}

  const char* kind() const override { return "asl"; }
  ShiftParams<Scalar>& shift() { return params_; }
  const ShiftParams<Scalar>& shift() const { return params_; }
  Index stride() const { return stride_; }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, bool) override {
    if (x.channels() != params_.channels())
      this->shape_fail("holds " + std::to_string(params_.channels()) +
                       " shift pairs, input is " + x.shape().str());
    auto [y, cache] = asl_forward(x, params_, stride_);
    cache_ = std::move(cache);
    return std::move(y);
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) override {
    this->require(cache_.valid(), "backward before forward");
    auto grads = asl_backward(g, cache_, params_.trainable);
    if (params_.trainable) {
      const Index c = params_.channels();
      for (Index i = 0; i < c; ++i) {
        grad_[i] += Scalar(grads.alpha[i]);
        grad_[c + i] += Scalar(grads.beta[i]);
      }
    }
    return std::move(grads.input);
  }

  void collect_params(std::vector<ParamRef<Scalar>>& out) override {
    out.push_back({this->name_ + ".shift", ParamKind::Shift, params_.trainable,
                   params_.theta.data(), grad_.data(), params_.param_count(),
                   {params_.param_count()}});
  }

 private:
  ShiftParams<Scalar> params_;
  Vec<Scalar> grad_;
  Index stride_;
  AslCache<Scalar> cache_;
};

// ---------------------------------------------------------------------------
// Batch normalization over (N, H, W) per channel, with running statistics.
// ---------------------------------------------------------------------------
template <typename Scalar>
class BatchNorm : public Layer<Scalar> {
 public:
  explicit BatchNorm(std::string name, Index channels, double momentum = 0.9,
                     double epsilon = 1e-5)
      : Layer<Scalar>(std::move(name)),
        momentum_(momentum),
        epsilon_(epsilon),
        gamma_(Vec<Scalar>::Ones(channels)),
        beta_(Vec<Scalar>::Zero(channels)),
        gamma_grad_(Vec<Scalar>::Zero(channels)),
        beta_grad_(Vec<Scalar>::Zero(channels)),
        running_mean_(Vec<Scalar>::Zero(channels)),
        running_var_(Vec<Scalar>::Ones(channels)) {}

  const char* kind() const override { return "bn"; }
  bool has_stats() const { return has_stats_; }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, bool training) override {
    if (x.channels() != gamma_.size())
      this->shape_fail("normalizes " + std::to_string(gamma_.size()) +
                       " channels, input is " + x.shape().str());
    const Index count = x.batch() * x.spatial();
    Tensor4<Scalar> y(x.shape());

    if (!training) {
      this->require(has_stats_, "eval-mode forward before any training statistics");
      for (Index c = 0; c < gamma_.size(); ++c) {
        const Scalar inv = Scalar(1) / std::sqrt(running_var_[c] + Scalar(epsilon_));
        for (Index n = 0; n < x.batch(); ++n)
          y.plane(n, c) = ((x.plane(n, c).array() - running_mean_[c]) * inv * gamma_[c] +
                           beta_[c])
                              .matrix();
      }
      trained_forward_ = false;
      return y;
    }

    xhat_ = Tensor4<Scalar>(x.shape());
    inv_std_.resize(gamma_.size());
    for (Index c = 0; c < gamma_.size(); ++c) {
      Scalar mean = 0;
      for (Index n = 0; n < x.batch(); ++n) mean += x.plane(n, c).sum();
      mean /= Scalar(count);
      Scalar var = 0;
      for (Index n = 0; n < x.batch(); ++n)
        var += (x.plane(n, c).array() - mean).square().sum();
      var /= Scalar(count);
      const Scalar inv = Scalar(1) / std::sqrt(var + Scalar(epsilon_));
      inv_std_[c] = inv;
      for (Index n = 0; n < x.batch(); ++n) {
        xhat_.plane(n, c) = ((x.plane(n, c).array() - mean) * inv).matrix();
        y.plane(n, c) = (xhat_.plane(n, c).array() * gamma_[c] + beta_[c]).matrix();
      }
      running_mean_[c] = Scalar(momentum_) * running_mean_[c] + Scalar(1 - momentum_) * mean;
      running_var_[c] = Scalar(momentum_) * running_var_[c] + Scalar(1 - momentum_) * var;
    }
    has_stats_ = true;
    trained_forward_ = true;
    return y;
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) override {
    this->require(trained_forward_, "backward requires a training-mode forward");
    const Index count = g.batch() * g.spatial();
    Tensor4<Scalar> gx(g.shape());
    for (Index c = 0; c < gamma_.size(); ++c) {
      Scalar sum_g = 0, sum_gx = 0;
      for (Index n = 0; n < g.batch(); ++n) {
        sum_g += g.plane(n, c).sum();
        sum_gx += (g.plane(n, c).array() * xhat_.plane(n, c).array()).sum();
      }
      gamma_grad_[c] += sum_gx;
      beta_grad_[c] += sum_g;
      const Scalar mean_g = sum_g / Scalar(count);
      const Scalar mean_gx = sum_gx / Scalar(count);
      const Scalar scale = gamma_[c] * inv_std_[c];
      for (Index n = 0; n < g.batch(); ++n)
        gx.plane(n, c) = ((g.plane(n, c).array() - mean_g -
                           xhat_.plane(n, c).array() * mean_gx) *
                          scale)
                             .matrix();
    }
    return gx;
  }

  void collect_params(std::vector<ParamRef<Scalar>>& out) override {
    out.push_back({this->name_ + ".gamma", ParamKind::BnAffine, true, gamma_.data(),
                   gamma_grad_.data(), gamma_.size(), {gamma_.size()}});
    out.push_back({this->name_ + ".beta", ParamKind::BnAffine, true, beta_.data(),
                   beta_grad_.data(), beta_.size(), {beta_.size()}});
  }

  void collect_state(std::vector<ParamRef<Scalar>>& out) override {
    out.push_back({this->name_ + ".running_mean", ParamKind::BnAffine, false,
                   running_mean_.data(), nullptr, running_mean_.size(),
                   {running_mean_.size()}});
    out.push_back({this->name_ + ".running_var", ParamKind::BnAffine, false,
                   running_var_.data(), nullptr, running_var_.size(), {running_var_.size()}});
  }

  /// Restoring a checkpoint provides usable statistics.
  void set_has_stats(bool v) { has_stats_ = v; }

 private:
  double momentum_, epsilon_;
  Vec<Scalar> gamma_, beta_, gamma_grad_, beta_grad_;
  Vec<Scalar> running_mean_, running_var_;
  Vec<Scalar> inv_std_;
  Tensor4<Scalar> xhat_;
  bool has_stats_ = false;
  bool trained_forward_ = false;
};

template <typename Scalar>
class Relu : public Layer<Scalar> {
 public:
  explicit Relu(std::string name) : Layer<Scalar>(std::move(name)) {}
  const char* kind() const override { return "relu"; }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, bool) override {
    input_ = x;
    have_forward_ = true;
    Tensor4<Scalar> y(x.shape());
    y.flat() = x.flat().cwiseMax(Scalar(0));
    return y;
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) override {
    this->require(have_forward_, "backward before forward");
    Tensor4<Scalar> gx(g.shape());
    gx.flat() = (input_.flat().array() > Scalar(0)).template cast<Scalar>() * g.flat().array();
    return gx;
  }

 private:
  Tensor4<Scalar> input_;
  bool have_forward_ = false;
};

template <typename Scalar>
class GlobalAvgPool : public Layer<Scalar> {
 public:
  explicit GlobalAvgPool(std::string name) : Layer<Scalar>(std::move(name)) {}
  const char* kind() const override { return "avgpool"; }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, bool) override {
    in_shape_ = x.shape();
    have_forward_ = true;
    Tensor4<Scalar> y(x.batch(), x.channels(), 1, 1);
    const Scalar inv = Scalar(1) / Scalar(x.spatial());
    for (Index n = 0; n < x.batch(); ++n)
      for (Index c = 0; c < x.channels(); ++c) y(n, c, 0, 0) = x.plane(n, c).sum() * inv;
    return y;
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) override {
    this->require(have_forward_, "backward before forward");
    Tensor4<Scalar> gx(in_shape_);
    const Scalar inv = Scalar(1) / Scalar(in_shape_.h * in_shape_.w);
    for (Index n = 0; n < gx.batch(); ++n)
      for (Index c = 0; c < gx.channels(); ++c)
        gx.plane(n, c).setConstant(g(n, c, 0, 0) * inv);
    return gx;
  }

 private:
  Shape4 in_shape_;
  bool have_forward_ = false;
};

/// Fully connected head over (N, C, 1, 1) feature vectors.
template <typename Scalar>
class Linear : public Layer<Scalar> {
 public:
  template <typename Rng>
  Linear(std::string name, Index in_features, Index out_features, Rng& rng)
      : Layer<Scalar>(std::move(name)),
        weight_(out_features, in_features),
        wgrad_(Mat<Scalar>::Zero(out_features, in_features)),
        bias_(Vec<Scalar>::Zero(out_features)),
        bgrad_(Vec<Scalar>::Zero(out_features)) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(in_features)));
    for (Index d = 0; d < out_features; ++d)
      for (Index c = 0; c < in_features; ++c) weight_(d, c) = Scalar(dist(rng));
  }

  const char* kind() const override { return "fc"; }
  Mat<Scalar>& weight() { return weight_; }
  Vec<Scalar>& bias() { return bias_; }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, bool) override {
    if (x.height() != 1 || x.width() != 1 || x.channels() != weight_.cols())
      this->shape_fail("expects (N," + std::to_string(weight_.cols()) + ",1,1), got " +
                       x.shape().str());
    input_ = x;
    have_forward_ = true;
    Tensor4<Scalar> y(x.batch(), weight_.rows(), 1, 1);
    for (Index n = 0; n < x.batch(); ++n)
      y.channel_matrix(n).noalias() = weight_ * x.channel_matrix(n);
    for (Index n = 0; n < x.batch(); ++n)
      for (Index d = 0; d < weight_.rows(); ++d) y(n, d, 0, 0) += bias_[d];
    return y;
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) override {
    this->require(have_forward_, "backward before forward");
    Tensor4<Scalar> gx(input_.shape());
    for (Index n = 0; n < g.batch(); ++n) {
      wgrad_.noalias() += g.channel_matrix(n) * input_.channel_matrix(n).transpose();
      for (Index d = 0; d < weight_.rows(); ++d) bgrad_[d] += g(n, d, 0, 0);
      gx.channel_matrix(n).noalias() = weight_.transpose() * g.channel_matrix(n);
    }
    return gx;
  }

  void collect_params(std::vector<ParamRef<Scalar>>& out) override {
    out.push_back({this->name_ + ".weight", ParamKind::Weight, true, weight_.data(),
                   wgrad_.data(), weight_.size(), {weight_.rows(), weight_.cols()}});
    out.push_back({this->name_ + ".bias", ParamKind::Bias, true, bias_.data(), bgrad_.data(),
                   bias_.size(), {bias_.size()}});
  }

 private:
  Mat<Scalar> weight_, wgrad_;
  Vec<Scalar> bias_, bgrad_;
  Tensor4<Scalar> input_;
  bool have_forward_ = false;
};

template <typename Scalar>
class Sequential : public Layer<Scalar> {
 public:
  explicit Sequential(std::string name) : Layer<Scalar>(std::move(name)) {}
  const char* kind() const override { return "sequential"; }

  void add(LayerPtr<Scalar> layer) { layers_.push_back(std::move(layer)); }
  Index size() const { return Index(layers_.size()); }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, bool training) override {
    Tensor4<Scalar> cur = x;
    for (auto& layer : layers_) cur = layer->forward(cur, training);
    return cur;
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) override {
    Tensor4<Scalar> cur = g;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
      cur = (*it)->backward(cur);
    return cur;
  }

  void collect_params(std::vector<ParamRef<Scalar>>& out) override {
    for (auto& layer : layers_) layer->collect_params(out);
  }
  void collect_state(std::vector<ParamRef<Scalar>>& out) override {
    for (auto& layer : layers_) layer->collect_state(out);
  }
  std::vector<Layer<Scalar>*> children() override {
    std::vector<Layer<Scalar>*> out;
    for (auto& layer : layers_) out.push_back(layer.get());
    return out;
  }

 private:
  std::vector<LayerPtr<Scalar>> layers_;
};

/// Residual combinator: y = main(x) + skip(x); an empty skip is the identity.
template <typename Scalar>
class Residual : public Layer<Scalar> {
 public:
  Residual(std::string name, LayerPtr<Scalar> main, LayerPtr<Scalar> skip)
      : Layer<Scalar>(std::move(name)), main_(std::move(main)), skip_(std::move(skip)) {}

  const char* kind() const override { return "residual"; }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, bool training) override {
    Tensor4<Scalar> main_out = main_->forward(x, training);
    Tensor4<Scalar> skip_out = skip_ ? skip_->forward(x, training) : x;
    if (!(main_out.shape() == skip_out.shape()))
      this->shape_fail("main path " + main_out.shape().str() + " vs skip " +
                       skip_out.shape().str());
    return eltwise_sum(main_out, skip_out);
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& g) override {
    Tensor4<Scalar> gm = main_->backward(g);
    Tensor4<Scalar> gs = skip_ ? skip_->backward(g) : g;
    return eltwise_sum(gm, gs);
  }

  void collect_params(std::vector<ParamRef<Scalar>>& out) override {
    main_->collect_params(out);
    if (skip_) skip_->collect_params(out);
  }
  void collect_state(std::vector<ParamRef<Scalar>>& out) override {
    main_->collect_state(out);
    if (skip_) skip_->collect_state(out);
  }
  std::vector<Layer<Scalar>*> children() override {
    std::vector<Layer<Scalar>*> out{main_.get()};
    if (skip_) out.push_back(skip_.get());
    return out;
  }

 private:
  LayerPtr<Scalar> main_, skip_;
};

/// Softmax cross-entropy over (N, classes, 1, 1) logits; mean over the batch.
template <typename Scalar>
class SoftmaxXent {
 public:
  double forward(const Tensor4<Scalar>& logits, const std::vector<int>& labels) {
    if (Index(labels.size()) != logits.batch())
      throw ShapeError("softmax_xent: " + std::to_string(labels.size()) +
                       " labels for batch " + logits.shape().str());
    if (logits.height() != 1 || logits.width() != 1)
      throw ShapeError("softmax_xent: logits must be (N,classes,1,1), got " +
                       logits.shape().str());
    probs_ = Tensor4<Scalar>(logits.shape());
    labels_ = labels;
    double loss = 0.0;
    for (Index n = 0; n < logits.batch(); ++n) {
      const Index classes = logits.channels();
      Scalar max_logit = logits(n, 0, 0, 0);
      for (Index c = 1; c < classes; ++c) max_logit = std::max(max_logit, logits(n, c, 0, 0));
      double denom = 0.0;
      for (Index c = 0; c < classes; ++c)
        denom += std::exp(double(logits(n, c, 0, 0) - max_logit));
      for (Index c = 0; c < classes; ++c)
        probs_(n, c, 0, 0) =
            Scalar(std::exp(double(logits(n, c, 0, 0) - max_logit)) / denom);
      loss -= std::log(std::max(double(probs_(n, labels[n], 0, 0)), 1e-300));
    }
    have_forward_ = true;
    return loss / double(logits.batch());
  }

  /// d(mean NLL)/d(logits) = (softmax - onehot) / N.
  Tensor4<Scalar> backward(double loss_scale = 1.0) const {
    if (!have_forward_) throw StateError("softmax_xent: backward before forward");
    Tensor4<Scalar> g = probs_;
    const Scalar inv = Scalar(loss_scale / double(g.batch()));
    for (Index n = 0; n < g.batch(); ++n) {
      g(n, labels_[n], 0, 0) -= Scalar(1);
      for (Index c = 0; c < g.channels(); ++c) g(n, c, 0, 0) *= inv;
    }
    return g;
  }

  const Tensor4<Scalar>& probabilities() const { return probs_; }

 private:
  Tensor4<Scalar> probs_;
  std::vector<int> labels_;
  bool have_forward_ = false;
};

}  // namespace asl
