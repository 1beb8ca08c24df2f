#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deepmix/numerics.hpp"

namespace deepmix {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct ImageShape {
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const ImageShape&) const = default;
};

/// n x d examples in [0, 1] with optional integer labels.
struct Dataset {
  std::string name;
  Matrix examples;
  std::vector<int> labels;  ///< empty when unlabeled
  std::optional<ImageShape> image_shape;

  [[nodiscard]] std::size_t size() const { return examples.rows(); }
  [[nodiscard]] std::size_t dim() const { return examples.cols(); }
  [[nodiscard]] bool has_labels() const { return !labels.empty(); }
  /// max label + 1 (0 when unlabeled).
  [[nodiscard]] int num_classes() const;

  /// Throws ConsistencyError / ArgumentError when an invariant is broken.
  void validate() const;
  [[nodiscard]] Dataset subset(std::span<const std::size_t> indices) const;
};

struct Split {
  Dataset train;
  Dataset valid;
  Dataset test;
  std::uint64_t seed = 0;
};

struct SplitFractions {
  double train = 1.0;
  double valid = 0.0;
  double test = 0.0;
};

/// Reads an IDX image file (and optional label file). Pixels are scaled by
/// 1/255; images are flattened row-major.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::optional<std::filesystem::path>& labels_path = std::nullopt);
std::vector<int> load_idx_labels(const std::filesystem::path& labels_path);

/// Writes bytes round(255 * x), clamped to [0, 255].
void write_idx_images(const std::filesystem::path& path, const Matrix& examples,
                      ImageShape shape);
void write_idx_labels(const std::filesystem::path& path, std::span<const int> labels);
/// Writes images (and labels, when present) next to each other.
void write_idx(const Dataset& d, const std::filesystem::path& images_path,
               const std::optional<std::filesystem::path>& labels_path);

/**
 * Synthetic stand-in for a face-like manifold dataset: 16x16 images of one
 * elongated Gaussian blob.
 *
 *   class     = i mod 8, orientation angle = class * pi / 8
 *   center    = (cx, cy), each Uniform[5.5, 9.5) in pixel coordinates
 *   intensity = exp(-(u^2 / (2 * 4.0^2) + v^2 / (2 * 1.2^2))) where (u, v) is
 *               the pixel offset from the center rotated by -angle
 *   noise     = Normal(0, 0.03^2) added per pixel, result clipped to [0, 1]
 *
 * Draws per example: cx, cy, then one normal per pixel in row-major order.
 */
Dataset make_synthetic_manifold(std::size_t n, std::uint64_t seed);

inline constexpr int kSyntheticClasses = 8;
inline constexpr std::size_t kSyntheticSide = 16;

/// Seeded shuffle followed by contiguous train / valid / test slices of size
/// floor(fraction * n).
Split split(const Dataset& d, SplitFractions fractions, std::uint64_t seed);

}  // namespace deepmix
