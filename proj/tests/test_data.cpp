#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "deepmix/data.hpp"
#include "deepmix/errors.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace deepmix;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "deepmix_test_data";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void check_unit_range(const Dataset& d) {
  const auto v = d.examples.values();
  CHECK(std::all_of(v.begin(), v.end(), [](double x) { return x >= 0.0 && x <= 1.0; }));
}

// Recovers each example's original position from a unique first-column tag.
std::vector<std::size_t> tags(const Dataset& d) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < d.size(); ++r) out.push_back(static_cast<std::size_t>(std::lround(d.examples(r, 0) * 1000)));
  return out;
}

}  // namespace

TEST_CASE("a 2x2 IDX image is scaled by 1/255") {
  const auto images = temp_path("one.idx3");
  const auto labels = temp_path("one.idx1");
  write_bytes(images, {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 255, 0});
  write_bytes(labels, {0, 0, 8, 1, 0, 0, 0, 1, 7});
  const Dataset d = load_idx(images, labels);
  CHECK(d.examples == Matrix{{0.0, 1.0, 1.0, 0.0}});
  CHECK(d.labels == std::vector<int>{7});
  REQUIRE(d.image_shape.has_value());
  CHECK(*d.image_shape == ImageShape{2, 2});
}

TEST_CASE("wrong magic numbers are rejected with the observed value") {
  const auto images = temp_path("bad.idx3");
  write_bytes(images, {0, 0, 8, 4, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 9});
  try {
    load_idx(images);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("0x00000804") != std::string::npos);
  }
  const auto good = temp_path("good.idx3");
  write_bytes(good, {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 9});
  const auto labels = temp_path("bad.idx1");
  write_bytes(labels, {0, 0, 8, 3, 0, 0, 0, 1, 2});
  CHECK_THROWS_AS(load_idx(good, labels), FormatError);
  CHECK_THROWS_AS(load_idx_labels(labels), FormatError);
  CHECK_THROWS_AS(load_idx(temp_path("missing.idx3")), FormatError);
}

TEST_CASE("image and label count mismatch is a consistency error") {
  const auto images = temp_path("two.idx3");
  write_bytes(images, {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 9, 10});
  const auto labels = temp_path("three.idx1");
  write_bytes(labels, {0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3});
  CHECK_THROWS_AS(load_idx(images, labels), ConsistencyError);
}

TEST_CASE("truncated payloads are rejected") {
  const auto images = temp_path("short.idx3");
  write_bytes(images, {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3});
  CHECK_THROWS_AS(load_idx(images), FormatError);
}

TEST_CASE("IDX writing is bit-exact and lossless up to quantization") {
  std::vector<unsigned char> bytes{0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0, 3};
  Prng rng(1);
  for (int i = 0; i < 18; ++i) bytes.push_back(static_cast<unsigned char>(rng.uniform_index(256)));
  const auto src = temp_path("src.idx3");
  write_bytes(src, bytes);
  const std::vector<unsigned char> label_bytes{0, 0, 8, 1, 0, 0, 0, 3, 4, 0, 9};
  const auto src_labels = temp_path("src.idx1");
  write_bytes(src_labels, label_bytes);

  const Dataset d = load_idx(src, src_labels);
  for (std::size_t i = 0; i < d.examples.size(); ++i)
    CHECK(std::lround(d.examples.values()[i] * 255.0) == bytes[16 + i]);
  const auto dst = temp_path("dst.idx3");
  const auto dst_labels = temp_path("dst.idx1");
  write_idx(d, dst, dst_labels);
  CHECK(read_bytes(dst) == bytes);
  CHECK(read_bytes(dst_labels) == label_bytes);

  // values outside [0, 1] clamp
  write_idx_images(dst, Matrix{{-0.5, 1.5, 0.5}}, {1, 3});
  const auto clamped = read_bytes(dst);
  CHECK(std::vector<unsigned char>(clamped.end() - 3, clamped.end()) ==
        std::vector<unsigned char>{0, 255, 128});
  CHECK_THROWS_AS(write_idx_images(dst, Matrix(1, 3), {2, 2}), ShapeError);
}

TEST_CASE("full MNIST training file") {
  const std::string dir = oracle::mnist_dir();
  if (dir.empty() || !fs::exists(fs::path(dir) / "train-images-idx3-ubyte")) {
    MESSAGE("MNIST directory not configured; skipping");
    return;
  }
  const Dataset d = load_idx(fs::path(dir) / "train-images-idx3-ubyte",
                             fs::path(dir) / "train-labels-idx1-ubyte");
  CHECK(d.size() == 60000);
  CHECK(d.dim() == 784);
  CHECK(d.num_classes() == 10);
  CHECK(*d.image_shape == ImageShape{28, 28});
  check_unit_range(d);
}

TEST_CASE("synthetic manifold contract") {
  const Dataset eight = make_synthetic_manifold(8, 3);
  CHECK(std::set<int>(eight.labels.begin(), eight.labels.end()).size() == 8);
  CHECK(eight.dim() == kSyntheticSide * kSyntheticSide);
  CHECK(*eight.image_shape == ImageShape{kSyntheticSide, kSyntheticSide});
  check_unit_range(eight);
  CHECK(make_synthetic_manifold(50, 9).examples == make_synthetic_manifold(50, 9).examples);
  CHECK_FALSE(make_synthetic_manifold(50, 9).examples == make_synthetic_manifold(50, 10).examples);
  CHECK_THROWS_AS(make_synthetic_manifold(0, 1), ArgumentError);
}

TEST_CASE("synthetic class means are well separated") {
  const Dataset d = make_synthetic_manifold(10000, 17);
  check_unit_range(d);
  std::vector<Vector> means(kSyntheticClasses, Vector(d.dim(), 0.0));
  std::vector<int> counts(kSyntheticClasses, 0);
  for (std::size_t r = 0; r < d.size(); ++r) {
    ++counts[d.labels[r]];
    for (std::size_t j = 0; j < d.dim(); ++j) means[d.labels[r]][j] += d.examples(r, j);
  }
  for (int c = 0; c < kSyntheticClasses; ++c)
    for (double& x : means[c]) x /= counts[c];
  double closest = 1e9;
  for (int a = 0; a < kSyntheticClasses; ++a)
    for (int b = a + 1; b < kSyntheticClasses; ++b)
      closest = std::min(closest, std::sqrt(squared_distance(means[a], means[b])));
  CHECK(closest > 0.5);
}

TEST_CASE("split examples") {
  Dataset d;
  d.name = "tagged";
  d.examples = Matrix(100, 2);
  for (std::size_t r = 0; r < 100; ++r) {
    d.examples(r, 0) = static_cast<double>(r) / 1000.0;
    d.labels.push_back(static_cast<int>(r % 3));
  }

  const Split all = split(d, {1.0, 0.0, 0.0}, 5);
  CHECK(all.train.size() == 100);
  CHECK(all.valid.size() == 0);
  CHECK(all.test.size() == 0);
  auto t = tags(all.train);
  std::sort(t.begin(), t.end());
  std::vector<std::size_t> expected(100);
  std::iota(expected.begin(), expected.end(), 0);
  CHECK(t == expected);

  const Split s = split(d, {0.8, 0.1, 0.1}, 5);
  CHECK(s.train.size() == 80);
  CHECK(s.valid.size() == 10);
  CHECK(s.test.size() == 10);
  std::set<std::size_t> seen;
  for (const Dataset* part : {&s.train, &s.valid, &s.test}) {
    for (std::size_t r = 0; r < part->size(); ++r) {
      const std::size_t tag = tags(*part)[r];
      CHECK(seen.insert(tag).second);
      CHECK(part->labels[r] == static_cast<int>(tag % 3));
    }
  }
  CHECK(seen.size() == 100);
  CHECK(s.seed == 5);
  CHECK(split(d, {0.8, 0.1, 0.1}, 5).train.examples == s.train.examples);
  CHECK_FALSE(split(d, {0.8, 0.1, 0.1}, 6).train.examples == s.train.examples);
}

TEST_CASE("split rejects invalid fractions") {
  const Dataset d = make_synthetic_manifold(10, 1);
  CHECK_THROWS_AS(split(d, {0.8, 0.3, 0.1}, 1), ArgumentError);
  CHECK_THROWS_AS(split(d, {-0.1, 0.5, 0.5}, 1), ArgumentError);
  CHECK_THROWS_AS(split(d, {0.0, 0.0, 0.0}, 1), ArgumentError);
}

TEST_CASE("dataset validation") {
  Dataset d = make_synthetic_manifold(4, 1);
  CHECK_NOTHROW(d.validate());
  d.labels.pop_back();
  CHECK_THROWS_AS(d.validate(), ConsistencyError);
  d = make_synthetic_manifold(4, 1);
  d.examples(0, 0) = 1.5;
  CHECK_THROWS(d.validate());
  d = make_synthetic_manifold(4, 1);
  d.image_shape = ImageShape{3, 3};
  CHECK_THROWS(d.validate());
}
