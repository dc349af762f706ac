#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "asl/data.hpp"
#include "asl/shift.hpp"
#include "testutil.hpp"

using namespace asl;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("cifar reader: first record byte is the label") {
  auto dir = temp_dir("asl_data_label");
  const auto path = (dir / "one.bin").string();
  {
    std::ofstream os(path, std::ios::binary);
    os.put(char(7));
    for (int i = 0; i < kCifarPixels; ++i) os.put(char(i % 251));
  }
  auto examples = read_cifar_file(path, false);
  REQUIRE(examples.size() == 1);
  CHECK(examples[0].label == 7);
  CHECK(examples[0].pixels[0] == 0);
  CHECK(examples[0].pixels[250] == 250);
  fs::remove_all(dir);
}

TEST_CASE("cifar reader: a 10000-record file yields 10000 examples") {
  auto dir = temp_dir("asl_data_10k");
  const auto path = (dir / "big.bin").string();
  auto examples = asl::testing::synthetic_examples(10'000, 10, 5);
  write_cifar_file(path, examples, false);
  CHECK(fs::file_size(path) == 10'000 * cifar_record_size(false));
  auto back = read_cifar_file(path, false);
  CHECK(back.size() == 10'000);
  fs::remove_all(dir);
}

TEST_CASE("cifar reader: truncated file raises a format error with an offset") {
  auto dir = temp_dir("asl_data_trunc");
  const auto path = (dir / "bad.bin").string();
  {
    std::ofstream os(path, std::ios::binary);
    std::vector<char> bytes(cifar_record_size(false) * 3 + 17, 'x');
    os.write(bytes.data(), std::streamsize(bytes.size()));
  }
  CHECK_THROWS_WITH_AS(read_cifar_file(path, false), doctest::Contains("byte offset"),
                       FormatError);
  fs::remove_all(dir);
}

TEST_CASE("cifar round-trip: read then re-serialize is byte-identical") {
  auto dir = temp_dir("asl_data_rt");
  const auto a = (dir / "a.bin").string();
  const auto b = (dir / "b.bin").string();
  std::mt19937_64 rng(11);
  {
    std::ofstream os(a, std::ios::binary);
    for (std::size_t i = 0; i < cifar_record_size(true) * 25; ++i)
      os.put(char(rng() % 256));
  }
  write_cifar_file(b, read_cifar_file(a, true), true);

  std::ifstream ia(a, std::ios::binary), ib(b, std::ios::binary);
  std::vector<char> ba((std::istreambuf_iterator<char>(ia)), std::istreambuf_iterator<char>());
  std::vector<char> bb((std::istreambuf_iterator<char>(ib)), std::istreambuf_iterator<char>());
  CHECK(ba == bb);
  fs::remove_all(dir);
}

TEST_CASE("dataset loader: resolves the standard CIFAR-10 tree and splits") {
  auto dir = temp_dir("asl_data_tree");
  asl::testing::write_synthetic_cifar10_tree(dir, 40, 30, 21);

  DatasetSpec spec;
  spec.root = dir.string();
  spec.split = "train";
  auto train = CifarDataset::load(spec);
  CHECK(train.size() == 200);  // 5 files x 40
  spec.split = "test";
  auto test = CifarDataset::load(spec);
  CHECK(test.size() == 30);
  CHECK(train.num_classes() == 10);
  fs::remove_all(dir);
}

TEST_CASE("normalization: per-channel mean of the streamed train split is ~0") {
  auto examples = asl::testing::synthetic_examples(512, 10, 31);
  auto ds = CifarDataset::from_examples(std::move(examples), 10);
  DatasetSpec spec;
  spec.batch_size = 64;
  BatchStream<float> stream(ds, spec);

  double sums[3] = {0, 0, 0};
  std::int64_t count = 0;
  for (Index b = 0; b < 8; ++b) {
    auto batch = stream.eval_batch(b);
    for (Index n = 0; n < batch.images.batch(); ++n)
      for (int c = 0; c < 3; ++c) sums[c] += batch.images.plane(n, c).sum();
    count += batch.images.batch() * kCifarSide * kCifarSide;
  }
  for (int c = 0; c < 3; ++c) CHECK(std::abs(sums[c] / double(count)) < 0.05);
}

TEST_CASE("augmentation: off means identity (up to normalization)") {
  auto examples = asl::testing::synthetic_examples(8, 10, 41);
  auto ds = CifarDataset::from_examples(examples, 10);
  DatasetSpec spec;
  spec.batch_size = 8;
  spec.augment = false;
  BatchStream<double> stream(ds, spec);
  auto batch = stream.batch_at(0);
  // batch 0, epoch 0 uses a permutation; eval path is unshuffled
  auto plain = stream.eval_batch(0);
  // both paths produce normalized copies of stored pixels; check one of them
  const auto& stats = ds.stats();
  const auto& ex = ds.examples()[0];
  for (int c = 0; c < 3; ++c)
    for (Index j = 0; j < 4; ++j) {
      const double want =
          (ex.pixels[std::size_t(c * 1024 + j)] / 255.0 - stats.mean[c]) / stats.stddev[c];
      CHECK(plain.images.data()[(0 * 3 + c) * 1024 + j] == doctest::Approx(want).epsilon(1e-12));
    }
  CHECK(batch.images.shape() == Shape4{8, 3, 32, 32});
}

TEST_CASE("augmentation: output is always 32x32 and reproducible for a seed") {
  auto examples = asl::testing::synthetic_examples(64, 10, 51);
  auto ds = CifarDataset::from_examples(std::move(examples), 10);
  DatasetSpec spec;
  spec.batch_size = 16;
  spec.augment = true;
  spec.seed = 77;
  BatchStream<float> s1(ds, spec), s2(ds, spec);
  for (Index t : {0, 3, 9}) {
    auto b1 = s1.batch_at(t);
    auto b2 = s2.batch_at(t);
    CHECK(b1.images.shape() == Shape4{16, 3, 32, 32});
    CHECK(max_abs_diff(b1.images, b2.images) == 0.0);
    CHECK(b1.labels == b2.labels);
  }
}

TEST_CASE("augmentation: crop offsets uniform over {0..8}^2, flips fair") {
  // coordinate-probe image: channel 0 stores the row index, channel 1 the
  // column index, so the drawn (dy, dx, flip) can be read back exactly
  std::array<std::uint8_t, kCifarPixels> probe{};
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      probe[std::size_t(0 * 1024 + y * 32 + x)] = std::uint8_t(y);
      probe[std::size_t(1 * 1024 + y * 32 + x)] = std::uint8_t(x);
    }

  const int draws = 10'000;
  std::vector<int> cell_counts(81, 0);
  int flips = 0;
  for (int t = 0; t < draws; ++t) {
    std::mt19937_64 rng(1000 + std::uint64_t(t));
    auto out = augment_cifar(probe, rng);
    const int sy = out[std::size_t(0 * 1024 + 16 * 32 + 16)];
    const int dy = sy - 12;
    // flip detection: column channel decreasing across x means flipped
    const int left = out[std::size_t(1 * 1024 + 16 * 32 + 12)];
    const int right = out[std::size_t(1 * 1024 + 16 * 32 + 20)];
    const bool flip = left > right;
    const int sx = out[std::size_t(1 * 1024 + 16 * 32 + 16)];
    const int dx = flip ? sx - 11 : sx - 12;
    REQUIRE(dy >= 0);
    REQUIRE(dy <= 8);
    REQUIRE(dx >= 0);
    REQUIRE(dx <= 8);
    cell_counts[std::size_t(dy * 9 + dx)]++;
    if (flip) ++flips;
  }
  // chi-square against uniform over 81 cells, 80 dof; 140 is far beyond the
  // 99.9th percentile
  const double expected = double(draws) / 81.0;
  double chi2 = 0.0;
  for (int c : cell_counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 140.0);
  CHECK(flips > int(0.45 * draws));
  CHECK(flips < int(0.55 * draws));
}

TEST_CASE("batch stream: deterministic function of (seed, iteration)") {
  auto examples = asl::testing::synthetic_examples(100, 10, 61);
  auto ds = CifarDataset::from_examples(std::move(examples), 10);
  DatasetSpec spec;
  spec.batch_size = 32;
  spec.seed = 5;
  BatchStream<float> stream(ds, spec);
  // crossing an epoch boundary (100 examples / 32 per batch)
  auto late_first = stream.batch_at(7);
  for (Index t = 0; t < 7; ++t) (void)stream.batch_at(t);
  auto late_again = stream.batch_at(7);
  CHECK(max_abs_diff(late_first.images, late_again.images) == 0.0);
  CHECK(late_first.labels == late_again.labels);
}

TEST_CASE("gen_shift_task: zero shift copies the input") {
  auto task = gen_shift_task<double>(0.0, 0.0, 4, 16, 71);
  CHECK(max_abs_diff(task.inputs, task.targets) == 0.0);
}

TEST_CASE("gen_shift_task: integer shift equals shift_integer") {
  auto task = gen_shift_task<double>(2.0, -1.0, 3, 20, 81);
  auto want = shift_integer(task.inputs, KernelOffset{1, 2, -1});
  CHECK(max_abs_diff(task.targets, want) < 1e-12);
}

TEST_CASE("gen_shift_task: fractional targets match the active shift forward") {
  auto task = gen_shift_task<double>(1.3, -0.7, 2, 24, 91);
  ShiftParams<double> params(1);
  params.alpha(0) = 1.3;
  params.beta(0) = -0.7;
  auto [y, cache] = asl_forward(task.inputs, params);
  // independent interpolator; agreement only up to rounding
  CHECK(max_abs_diff(task.targets, y) < 1e-12);
}

TEST_CASE("gen_shift_task: rejects shifts beyond 8 pixels") {
  CHECK_THROWS_AS(gen_shift_task<float>(9.0, 0.0, 1, 8, 1), ConfigError);
}

TEST_CASE("resolve_data_root: flag wins over environment") {
  CHECK(resolve_data_root("/explicit") == "/explicit");
}
