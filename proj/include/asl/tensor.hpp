#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <new>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace asl {

using Index = Eigen::Index;

/// 64-byte aligned allocator. Tensor buffers share one alignment so that
/// vectorized kernels split head/body/tail identically no matter where the
/// allocation landed; results become a pure function of shapes and values.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    if (n == 0) return nullptr;
    void* p = ::operator new(n * sizeof(T), std::align_val_t(kAlign));
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(kAlign));
  }
  bool operator==(const AlignedAllocator&) const { return true; }
  bool operator!=(const AlignedAllocator&) const { return false; }
};

/// Shape mismatch between operands; the message names both shapes.
class ShapeError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Operation called out of order (e.g. backward before forward).
class StateError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed file contents (checkpoints, datasets).
class FormatError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid network or run configuration.
class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid user-facing request (CLI arguments, report formats).
class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { Float32 = 0, Float64 = 1, Int64 = 2 };

template <typename Scalar>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::Float32; }
template <>
constexpr DType dtype_of<double>() { return DType::Float64; }

inline const char* dtype_name(DType t) {
  switch (t) {
    case DType::Float32: return "float32";
    case DType::Float64: return "float64";
    case DType::Int64: return "int64";
  }
  return "?";
}

// Dense matrices are row-major throughout so that a (C, H*W) map over an
// NCHW buffer is a zero-copy view.
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatMap = Eigen::Map<Mat<Scalar>>;
template <typename Scalar>
using ConstMatMap = Eigen::Map<const Mat<Scalar>>;

struct Shape4 {
  Index n = 0, c = 0, h = 0, w = 0;

  Index count() const { return n * c * h * w; }
  bool operator==(const Shape4&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

/// Dense 4-D tensor in contiguous row-major (N, C, H, W) order.
template <typename Scalar>
class Tensor4 {
 public:
  using ScalarType = Scalar;

  Tensor4() = default;

  Tensor4(Index n, Index c, Index h, Index w) : shape_{n, c, h, w} {
    if (n < 1 || c < 1 || h < 1 || w < 1)
      throw ShapeError("Tensor4: all dims must be positive, got " + shape_.str());
    data_.assign(static_cast<std::size_t>(shape_.count()), Scalar(0));
  }

  explicit Tensor4(const Shape4& s) : Tensor4(s.n, s.c, s.h, s.w) {}

  const Shape4& shape() const { return shape_; }
  Index batch() const { return shape_.n; }
  Index channels() const { return shape_.c; }
  Index height() const { return shape_.h; }
  Index width() const { return shape_.w; }
  Index size() const { return static_cast<Index>(data_.size()); }
  Index spatial() const { return shape_.h * shape_.w; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator()(Index n, Index c, Index h, Index w) {
    return data_[idx(n, c, h, w)];
  }
  Scalar operator()(Index n, Index c, Index h, Index w) const {
    return data_[idx(n, c, h, w)];
  }

  /// Zero-padded read: out-of-bounds spatial coordinates yield 0.
  Scalar at_padded(Index n, Index c, Index h, Index w) const {
    if (h < 0 || h >= shape_.h || w < 0 || w >= shape_.w) return Scalar(0);
    return data_[idx(n, c, h, w)];
  }

  /// (C, H*W) view of one batch item; the matrix form worked on by GEMM.
  MatMap<Scalar> channel_matrix(Index n) {
    return MatMap<Scalar>(data() + n * shape_.c * spatial(), shape_.c, spatial());
  }
  ConstMatMap<Scalar> channel_matrix(Index n) const {
    return ConstMatMap<Scalar>(data() + n * shape_.c * spatial(), shape_.c, spatial());
  }

  /// (H, W) view of one channel plane.
  MatMap<Scalar> plane(Index n, Index c) {
    return MatMap<Scalar>(data() + (n * shape_.c + c) * spatial(), shape_.h, shape_.w);
  }
  ConstMatMap<Scalar> plane(Index n, Index c) const {
    return ConstMatMap<Scalar>(data() + (n * shape_.c + c) * spatial(), shape_.h, shape_.w);
  }

  /// Whole buffer as a flat column vector view.
  Eigen::Map<Vec<Scalar>> flat() { return {data(), size()}; }
  Eigen::Map<const Vec<Scalar>> flat() const { return {data(), size()}; }

  void set_zero() { std::fill(data_.begin(), data_.end(), Scalar(0)); }
  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (Scalar v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  static Tensor4 constant(Index n, Index c, Index h, Index w, Scalar v) {
    Tensor4 t(n, c, h, w);
    t.fill(v);
    return t;
  }

  template <typename Rng>
  static Tensor4 random_uniform(Index n, Index c, Index h, Index w, Scalar lo,
                                Scalar hi, Rng& rng) {
    Tensor4 t(n, c, h, w);
    std::uniform_real_distribution<double> dist{double(lo), double(hi)};
    for (Index i = 0; i < t.size(); ++i) t.data_[i] = Scalar(dist(rng));
    return t;
  }

  template <typename Rng>
  static Tensor4 random_normal(Index n, Index c, Index h, Index w, Scalar stddev,
                               Rng& rng) {
    Tensor4 t(n, c, h, w);
    std::normal_distribution<double> dist(0.0, double(stddev));
    for (Index i = 0; i < t.size(); ++i) t.data_[i] = Scalar(dist(rng));
    return t;
  }

  template <typename Other>
  Tensor4<Other> cast() const {
    Tensor4<Other> out(shape_.n, shape_.c, shape_.h, shape_.w);
    for (Index i = 0; i < size(); ++i)
      out.data()[i] = static_cast<Other>(data_[i]);
    return out;
  }

 private:
  std::size_t idx(Index n, Index c, Index h, Index w) const {
    return static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w);
  }

  Shape4 shape_;
  std::vector<Scalar, AlignedAllocator<Scalar>> data_;
};

template <typename Scalar>
void check_same_shape(const Tensor4<Scalar>& a, const Tensor4<Scalar>& b,
                      const char* what) {
  if (!(a.shape() == b.shape()))
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() +
                     " vs " + b.shape().str());
}

template <typename Scalar>
Tensor4<Scalar> eltwise_sum(const Tensor4<Scalar>& a, const Tensor4<Scalar>& b) {
  check_same_shape(a, b, "eltwise_sum");
  Tensor4<Scalar> out(a.shape());
  out.flat() = a.flat() + b.flat();
  return out;
}

template <typename Scalar>
double max_abs_diff(const Tensor4<Scalar>& a, const Tensor4<Scalar>& b) {
  check_same_shape(a, b, "max_abs_diff");
  return (a.flat().template cast<double>() - b.flat().template cast<double>())
      .cwiseAbs()
      .maxCoeff();
}

}  // namespace asl
