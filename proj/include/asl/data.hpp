#pragma once

#include <array>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "asl/tensor.hpp"

namespace asl {

// ---------------------------------------------------------------------------
// CIFAR binary format: per record one label byte (plus a leading coarse-label
// byte for CIFAR-100), then 3x32x32 pixel bytes, channel-planar.
// ---------------------------------------------------------------------------
inline constexpr Index kCifarSide = 32;
inline constexpr Index kCifarPixels = 3 * kCifarSide * kCifarSide;  // 3072

struct CifarExample {
  std::uint8_t label = 0;
  std::uint8_t coarse_label = 0;  // CIFAR-100 only
  std::array<std::uint8_t, kCifarPixels> pixels{};
};

inline std::size_t cifar_record_size(bool cifar100) {
  return (cifar100 ? 2 : 1) + std::size_t(kCifarPixels);
}

inline std::vector<CifarExample> read_cifar_file(const std::string& path, bool cifar100) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw FormatError("cannot open dataset file: " + path);
  const std::uint64_t size = std::uint64_t(is.tellg());
  const std::size_t rec = cifar_record_size(cifar100);
  if (size == 0 || size % rec != 0)
    throw FormatError(path + ": size " + std::to_string(size) +
                      " is not a multiple of the record size " + std::to_string(rec) +
                      "; trailing partial record at byte offset " +
                      std::to_string(size - size % rec));
  is.seekg(0);
  std::vector<CifarExample> out(size / rec);
  std::vector<char> buf(rec);
  for (std::size_t i = 0; i < out.size(); ++i) {
    is.read(buf.data(), std::streamsize(rec));
    if (!is)
      throw FormatError(path + ": short read at byte offset " + std::to_string(i * rec));
    std::size_t off = 0;
    if (cifar100) out[i].coarse_label = std::uint8_t(buf[off++]);
    out[i].label = std::uint8_t(buf[off++]);
    std::memcpy(out[i].pixels.data(), buf.data() + off, kCifarPixels);
  }
  return out;
}

inline void write_cifar_file(const std::string& path, const std::vector<CifarExample>& examples,
                             bool cifar100) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write dataset file: " + path);
  for (const auto& e : examples) {
    if (cifar100) os.put(char(e.coarse_label));
    os.put(char(e.label));
    os.write(reinterpret_cast<const char*>(e.pixels.data()), kCifarPixels);
  }
  if (!os) throw FormatError("short write: " + path);
}

// ---------------------------------------------------------------------------
// Dataset handling
// ---------------------------------------------------------------------------
struct ChannelStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

/// Per-channel mean and standard deviation over pixel values scaled to [0,1].
inline ChannelStats compute_channel_stats(const std::vector<CifarExample>& examples) {
  ChannelStats stats;
  if (examples.empty()) return stats;
  const double count = double(examples.size()) * kCifarSide * kCifarSide;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (const auto& e : examples)
      for (Index i = 0; i < kCifarSide * kCifarSide; ++i) {
        const double v = e.pixels[std::size_t(c * kCifarSide * kCifarSide + i)] / 255.0;
        sum += v;
        sq += v * v;
      }
    stats.mean[c] = sum / count;
    const double var = std::max(sq / count - stats.mean[c] * stats.mean[c], 1e-12);
    stats.stddev[c] = std::sqrt(var);
  }
  return stats;
}

struct DatasetSpec {
  enum class Source { Cifar10, Cifar100 };
  Source source = Source::Cifar10;
  std::string root;
  std::string split = "train";
  Index batch_size = 128;
  bool augment = false;
  std::uint64_t seed = 0;
};

/// Resolves the dataset root from an explicit flag or ASL_DATA_ROOT.
inline std::string resolve_data_root(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("ASL_DATA_ROOT")) return env;
  return "";
}

class CifarDataset {
 public:
  static CifarDataset load(const DatasetSpec& spec) {
    namespace fs = std::filesystem;
    const bool c100 = spec.source == DatasetSpec::Source::Cifar100;
    fs::path root(spec.root);
    const char* subdir = c100 ? "cifar-100-binary" : "cifar-10-batches-bin";
    if (fs::is_directory(root / subdir)) root /= subdir;

    std::vector<std::string> files;
    if (c100) {
      files.push_back((root / (spec.split == "train" ? "train.bin" : "test.bin")).string());
    } else if (spec.split == "train") {
      for (int i = 1; i <= 5; ++i)
        files.push_back((root / ("data_batch_" + std::to_string(i) + ".bin")).string());
    } else {
      files.push_back((root / "test_batch.bin").string());
    }

    CifarDataset ds;
    ds.num_classes_ = c100 ? 100 : 10;
    for (const auto& f : files) {
      auto part = read_cifar_file(f, c100);
      ds.examples_.insert(ds.examples_.end(), part.begin(), part.end());
    }
    ds.stats_ = compute_channel_stats(ds.examples_);
    return ds;
  }

  static CifarDataset from_examples(std::vector<CifarExample> examples, int num_classes) {
    CifarDataset ds;
    ds.examples_ = std::move(examples);
    ds.num_classes_ = num_classes;
    ds.stats_ = compute_channel_stats(ds.examples_);
    return ds;
  }

  const std::vector<CifarExample>& examples() const { return examples_; }
  Index size() const { return Index(examples_.size()); }
  int num_classes() const { return num_classes_; }
  const ChannelStats& stats() const { return stats_; }
  void set_stats(const ChannelStats& s) { stats_ = s; }

 private:
  std::vector<CifarExample> examples_;
  ChannelStats stats_;
  int num_classes_ = 10;
};

// ---------------------------------------------------------------------------
// Augmentation: zero-pad 4 pixels per side, random 32x32 crop, horizontal
// flip with probability 1/2. Operates on raw pixel bytes.
// ---------------------------------------------------------------------------
template <typename Rng>
std::array<std::uint8_t, kCifarPixels> augment_cifar(
    const std::array<std::uint8_t, kCifarPixels>& pixels, Rng& rng) {
  std::uniform_int_distribution<int> crop(0, 8);
  const int dy = crop(rng);
  const int dx = crop(rng);
  const bool flip = (rng() & 1u) != 0;

  std::array<std::uint8_t, kCifarPixels> out{};
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < kCifarSide; ++y)
      for (int x = 0; x < kCifarSide; ++x) {
        // crop window position inside the zero-padded 40x40 frame, sampled
        // from the flipped image when the coin says so
        const int sy = y + dy - 4;
        const int sx = (flip ? int(kCifarSide) - 1 - x : x) + dx - 4;
        std::uint8_t v = 0;
        if (sy >= 0 && sy < kCifarSide && sx >= 0 && sx < kCifarSide)
          v = pixels[std::size_t((c * kCifarSide + sy) * kCifarSide + sx)];
        out[std::size_t((c * kCifarSide + y) * kCifarSide + x)] = v;
      }
  return out;
}

// ---------------------------------------------------------------------------
// Deterministic batch stream: the batch at iteration t is a pure function of
// (seed, t), so an interrupted run resumes bit-identically.
// ---------------------------------------------------------------------------
template <typename Scalar>
class BatchStream {
 public:
  struct Batch {
    Tensor4<Scalar> images;
    std::vector<int> labels;
  };

  BatchStream(const CifarDataset& dataset, DatasetSpec spec)
      : dataset_(&dataset), spec_(std::move(spec)) {
    if (dataset.size() == 0) throw ConfigError("BatchStream: empty dataset");
  }

  Index batch_size() const { return spec_.batch_size; }
  Index examples_per_epoch() const { return dataset_->size(); }
  Index batches_per_epoch() const {
    return (dataset_->size() + spec_.batch_size - 1) / spec_.batch_size;
  }

  Batch batch_at(Index iter) const {
    const Index n = dataset_->size();
    const Index b = spec_.batch_size;
    Batch batch{Tensor4<Scalar>(b, 3, kCifarSide, kCifarSide), std::vector<int>(b)};
    const auto& stats = dataset_->stats();

    for (Index i = 0; i < b; ++i) {
      const Index global = iter * b + i;
      const Index epoch = global / n;
      const Index pos = global % n;
      ensure_perm(epoch);
      const CifarExample& ex = dataset_->examples()[std::size_t(perm_[std::size_t(pos)])];
      batch.labels[std::size_t(i)] = ex.label;

      std::array<std::uint8_t, kCifarPixels> px = ex.pixels;
      if (spec_.augment) {
        std::mt19937_64 rng(mix(spec_.seed, 0x617567u, std::uint64_t(global)));
        px = augment_cifar(px, rng);
      }
      for (int c = 0; c < 3; ++c) {
        const double inv = 1.0 / stats.stddev[std::size_t(c)];
        for (Index j = 0; j < kCifarSide * kCifarSide; ++j) {
          const double v = px[std::size_t(c * kCifarSide * kCifarSide + j)] / 255.0;
          batch.images.data()[((i * 3 + c) * kCifarSide * kCifarSide) + j] =
              Scalar((v - stats.mean[std::size_t(c)]) * inv);
        }
      }
    }
    return batch;
  }

  /// Sequential evaluation batches; the final one may be short.
  Batch eval_batch(Index index) const {
    const Index n = dataset_->size();
    const Index begin = index * spec_.batch_size;
    const Index count = std::min(spec_.batch_size, n - begin);
    if (count <= 0) throw ConfigError("eval_batch: index past end of dataset");
    Batch batch{Tensor4<Scalar>(count, 3, kCifarSide, kCifarSide), std::vector<int>(count)};
    const auto& stats = dataset_->stats();
    for (Index i = 0; i < count; ++i) {
      const CifarExample& ex = dataset_->examples()[std::size_t(begin + i)];
      batch.labels[std::size_t(i)] = ex.label;
      for (int c = 0; c < 3; ++c) {
        const double inv = 1.0 / stats.stddev[std::size_t(c)];
        for (Index j = 0; j < kCifarSide * kCifarSide; ++j) {
          const double v = ex.pixels[std::size_t(c * kCifarSide * kCifarSide + j)] / 255.0;
          batch.images.data()[((i * 3 + c) * kCifarSide * kCifarSide) + j] =
              Scalar((v - stats.mean[std::size_t(c)]) * inv);
        }
      }
    }
    return batch;
  }

 private:
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream, std::uint64_t v) {
    std::uint64_t x = seed ^ (stream * 0x9e3779b97f4a7c15ull) ^ (v + 0x632be59bd9b4e019ull);
    x ^= x >> 27;
    x *= 0x2545f4914f6cdd1dull;
    x ^= x >> 31;
    return x;
  }

  void ensure_perm(Index epoch) const {
    if (epoch == perm_epoch_ && !perm_.empty()) return;
    perm_.resize(std::size_t(dataset_->size()));
    for (std::size_t i = 0; i < perm_.size(); ++i) perm_[i] = Index(i);
    std::mt19937_64 rng(mix(spec_.seed, 0x73687566u, std::uint64_t(epoch)));
    for (std::size_t i = perm_.size(); i > 1; --i)
      std::swap(perm_[i - 1], perm_[std::size_t(rng() % i)]);
    perm_epoch_ = epoch;
  }

  const CifarDataset* dataset_;
  DatasetSpec spec_;
  mutable std::vector<Index> perm_;
  mutable Index perm_epoch_ = -1;
};

// ---------------------------------------------------------------------------
// Synthetic shift-recovery task: smooth images plus targets produced by an
// independent reference interpolator.
// ---------------------------------------------------------------------------

/// Reference bilinear shift, written as row/column lerps. Kept independent of
/// the library's own interpolation path; used to generate oracle targets.
template <typename Scalar>
Tensor4<Scalar> reference_bilinear_shift(const Tensor4<Scalar>& x, double alpha, double beta) {
  Tensor4<Scalar> y(x.shape());
  for (Index n = 0; n < x.batch(); ++n)
    for (Index c = 0; c < x.channels(); ++c)
      for (Index m = 0; m < x.height(); ++m)
        for (Index p = 0; p < x.width(); ++p) {
          const double sy = double(m) + alpha;
          const double sx = double(p) + beta;
          const Index y0 = Index(std::floor(sy));
          const Index x0 = Index(std::floor(sx));
          const double wy = sy - double(y0);
          const double wx = sx - double(x0);
          const double top = (1.0 - wx) * double(x.at_padded(n, c, y0, x0)) +
                             wx * double(x.at_padded(n, c, y0, x0 + 1));
          const double bot = (1.0 - wx) * double(x.at_padded(n, c, y0 + 1, x0)) +
                             wx * double(x.at_padded(n, c, y0 + 1, x0 + 1));
          y(n, c, m, p) = Scalar((1.0 - wy) * top + wy * bot);
        }
  return y;
}

template <typename Scalar>
struct ShiftTask {
  Tensor4<Scalar> inputs;
  Tensor4<Scalar> targets;
  double alpha = 0.0;
  double beta = 0.0;
};

/// Gaussian-smoothed noise images. White noise carries no sub-pixel gradient
/// information; smoothing gives the recovery loss a wide, clean basin.
template <typename Scalar>
ShiftTask<Scalar> gen_shift_task(double alpha, double beta, Index count, Index side,
                                 std::uint64_t seed, double smooth_sigma = 2.5) {
  if (std::abs(alpha) > 8.0 || std::abs(beta) > 8.0)
    throw ConfigError("gen_shift_task: |shift| must be <= 8 pixels");
  std::mt19937_64 rng(seed);
  auto noise = Tensor4<Scalar>::random_normal(count, 1, side, side, Scalar(1), rng);

  const Index radius = Index(std::ceil(3.0 * smooth_sigma));
  std::vector<double> kernel(std::size_t(2 * radius + 1));
  double ksum = 0.0;
  for (Index i = -radius; i <= radius; ++i) {
    kernel[std::size_t(i + radius)] = std::exp(-0.5 * double(i * i) / (smooth_sigma * smooth_sigma));
    ksum += kernel[std::size_t(i + radius)];
  }
  for (auto& k : kernel) k /= ksum;

  // separable blur with zero-padded borders
  Tensor4<Scalar> rows(noise.shape());
  for (Index n = 0; n < count; ++n)
    for (Index m = 0; m < side; ++m)
      for (Index p = 0; p < side; ++p) {
        double acc = 0.0;
        for (Index i = -radius; i <= radius; ++i)
          acc += kernel[std::size_t(i + radius)] * double(noise.at_padded(n, 0, m, p + i));
        rows(n, 0, m, p) = Scalar(acc);
      }
  ShiftTask<Scalar> task;
  task.inputs = Tensor4<Scalar>(noise.shape());
  for (Index n = 0; n < count; ++n)
    for (Index m = 0; m < side; ++m)
      for (Index p = 0; p < side; ++p) {
        double acc = 0.0;
        for (Index i = -radius; i <= radius; ++i)
          acc += kernel[std::size_t(i + radius)] * double(rows.at_padded(n, 0, m + i, p));
        task.inputs(n, 0, m, p) = Scalar(acc * 8.0);  // restore O(1) amplitude
      }

  task.targets = reference_bilinear_shift(task.inputs, alpha, beta);
  task.alpha = alpha;
  task.beta = beta;
  return task;
}

}  // namespace asl
