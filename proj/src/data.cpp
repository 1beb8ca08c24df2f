#include "deepmix/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <iomanip>
#include <sstream>

#include "deepmix/errors.hpp"

namespace deepmix {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) throw FormatError(path.string() + ": truncated IDX header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                 static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), b.size());
}

std::string hex(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << std::setw(8) << std::setfill('0') << v;
  return os.str();
}

}  // namespace

int Dataset::num_classes() const {
  if (labels.empty()) return 0;
  return *std::max_element(labels.begin(), labels.end()) + 1;
}

void Dataset::validate() const {
  for (double x : examples.values()) {
    if (!(x >= 0.0 && x <= 1.0)) throw ArgumentError(name + ": example value outside [0,1]");
  }
  if (!labels.empty() && labels.size() != examples.rows()) {
    throw ConsistencyError(name + ": " + std::to_string(labels.size()) + " labels for " +
                           std::to_string(examples.rows()) + " examples");
  }
  if (std::any_of(labels.begin(), labels.end(), [](int l) { return l < 0; })) {
    throw ArgumentError(name + ": negative label");
  }
  if (image_shape && image_shape->height * image_shape->width != examples.cols()) {
    throw ConsistencyError(name + ": image shape does not match dimension");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.name = name;
  out.image_shape = image_shape;
  out.examples = gather_rows(examples, indices);
  if (has_labels()) {
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.labels.push_back(labels[i]);
  }
  return out;
}

std::vector<int> load_idx_labels(const std::filesystem::path& labels_path) {
  const auto bytes = read_file(labels_path);
  const std::uint32_t magic = read_be32(bytes, 0, labels_path);
  if (magic != kIdxLabelsMagic) {
    throw FormatError(labels_path.string() + ": expected label magic 0x00000801, found " + hex(magic));
  }
  const std::uint32_t count = read_be32(bytes, 4, labels_path);
  if (bytes.size() != 8 + std::size_t{count}) {
    throw FormatError(labels_path.string() + ": payload length does not match count");
  }
  return {bytes.begin() + 8, bytes.end()};
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::optional<std::filesystem::path>& labels_path) {
  const auto bytes = read_file(images_path);
  const std::uint32_t magic = read_be32(bytes, 0, images_path);
  if (magic != kIdxImagesMagic) {
    throw FormatError(images_path.string() + ": expected image magic 0x00000803, found " + hex(magic));
  }
  const std::size_t count = read_be32(bytes, 4, images_path);
  const std::size_t height = read_be32(bytes, 8, images_path);
  const std::size_t width = read_be32(bytes, 12, images_path);
  const std::size_t dim = height * width;
  if (bytes.size() != 16 + count * dim) {
    throw FormatError(images_path.string() + ": payload length does not match dimensions");
  }

  Dataset d;
  d.name = images_path.filename().string();
  d.image_shape = ImageShape{height, width};
  d.examples = Matrix(count, dim);
  auto values = d.examples.values();
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = bytes[16 + i] / 255.0;

  if (labels_path) {
    d.labels = load_idx_labels(*labels_path);
    if (d.labels.size() != count) {
      throw ConsistencyError(images_path.string() + " has " + std::to_string(count) +
                             " images but " + labels_path->string() + " has " +
                             std::to_string(d.labels.size()) + " labels");
    }
  }
  return d;
}

void write_idx_images(const std::filesystem::path& path, const Matrix& examples,
                      ImageShape shape) {
  if (shape.height * shape.width != examples.cols()) {
    throw ShapeError("write_idx_images: shape does not match " + examples.shape_string());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  put_be32(out, kIdxImagesMagic);
  put_be32(out, static_cast<std::uint32_t>(examples.rows()));
  put_be32(out, static_cast<std::uint32_t>(shape.height));
  put_be32(out, static_cast<std::uint32_t>(shape.width));
  std::vector<char> payload(examples.size());
  const auto values = examples.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double q = std::clamp(std::round(values[i] * 255.0), 0.0, 255.0);
    payload[i] = static_cast<char>(static_cast<unsigned char>(q));
  }
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

void write_idx_labels(const std::filesystem::path& path, std::span<const int> labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) {
    if (l < 0 || l > 255) throw ArgumentError("write_idx_labels: label outside [0,255]");
    out.put(static_cast<char>(static_cast<unsigned char>(l)));
  }
}

void write_idx(const Dataset& d, const std::filesystem::path& images_path,
               const std::optional<std::filesystem::path>& labels_path) {
  ImageShape shape = d.image_shape.value_or(ImageShape{1, d.dim()});
  write_idx_images(images_path, d.examples, shape);
  if (labels_path && d.has_labels()) write_idx_labels(*labels_path, d.labels);
}

Dataset make_synthetic_manifold(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ArgumentError("make_synthetic_manifold: n must be at least 1");
  constexpr double kMajor = 4.0;
  constexpr double kMinor = 1.2;
  constexpr double kNoise = 0.03;
  constexpr std::size_t side = kSyntheticSide;

  Prng rng(seed);
  Dataset d;
  d.name = "synthetic-manifold";
  d.image_shape = ImageShape{side, side};
  d.examples = Matrix(n, side * side);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % kSyntheticClasses);
    const double angle = cls * std::numbers::pi / kSyntheticClasses;
    const double cs = std::cos(angle);
    const double sn = std::sin(angle);
    const double cx = 5.5 + 4.0 * rng.uniform();
    const double cy = 5.5 + 4.0 * rng.uniform();
    auto row = d.examples.row(i);
    for (std::size_t py = 0; py < side; ++py) {
      for (std::size_t px = 0; px < side; ++px) {
        const double dx = static_cast<double>(px) - cx;
        const double dy = static_cast<double>(py) - cy;
        const double u = dx * cs + dy * sn;
        const double v = -dx * sn + dy * cs;
        const double blob =
            std::exp(-(u * u / (2.0 * kMajor * kMajor) + v * v / (2.0 * kMinor * kMinor)));
        row[py * side + px] = std::clamp(blob + kNoise * rng.normal(), 0.0, 1.0);
      }
    }
    d.labels[i] = cls;
  }
  return d;
}

Split split(const Dataset& d, SplitFractions fractions, std::uint64_t seed) {
  const double total = fractions.train + fractions.valid + fractions.test;
  if (fractions.train < 0.0 || fractions.valid < 0.0 || fractions.test < 0.0 ||
      total > 1.0 + 1e-12 || total <= 0.0) {
    throw ArgumentError("split: fractions must be non-negative, not all zero, and sum to at most 1");
  }
  const std::size_t n = d.size();
  auto count = [n](double f) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
  };
  const std::size_t n_train = count(fractions.train);
  const std::size_t n_valid = count(fractions.valid);
  const std::size_t n_test = std::min(count(fractions.test), n - n_train - n_valid);

  Prng rng(seed);
  const auto order = random_permutation(n, rng);
  const std::span<const std::size_t> all(order);

  Split s;
  s.seed = seed;
  s.train = d.subset(all.subspan(0, n_train));
  s.valid = d.subset(all.subspan(n_train, n_valid));
  s.test = d.subset(all.subspan(n_train + n_valid, n_test));
  s.train.name = d.name + "/train";
  s.valid.name = d.name + "/valid";
  s.test.name = d.name + "/test";
  return s;
}

}  // namespace deepmix
