#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace deepmix {

using Vector = std::vector<double>;

/**
 * Seeded, splittable pseudo-random generator.
 *
 * The core is xoshiro256** whose 256-bit state is filled from a 64-bit key by
 * SplitMix64. A root generator's key is its seed; split(i) derives a child key
 * from (parent key, i) only, so a child stream is reproducible from the seed
 * and the chain of stream indices regardless of how many draws the parent
 * has already made.
 *
 * Draw accounting (callers document their consumption in these units):
 *   next_u64, uniform, bernoulli, uniform_index  -> one 64-bit draw
 *   normal                                       -> two 64-bit draws
 */
class Prng {
 public:
  explicit Prng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Box-Muller, cosine branch only; no cached spare.
  double normal();
  /// true with probability p (u < p).
  bool bernoulli(double p);
  /// Uniform on {0, ..., n-1}; n must be positive.
  std::size_t uniform_index(std::size_t n);

  [[nodiscard]] Prng split(std::uint64_t index) const;
  [[nodiscard]] std::uint64_t key() const { return key_; }

 private:
  struct FromKey {};
  Prng(FromKey, std::uint64_t key);

  std::uint64_t key_;
  std::uint64_t state_[4];
};

/// In-place Fisher-Yates shuffle of 0..n-1 (n-1 draws).
std::vector<std::size_t> random_permutation(std::size_t n, Prng& rng);

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix from_row(std::span<const double> row);

  [[nodiscard]] std::size_t rows() const { return rows_; }
  [[nodiscard]] std::size_t cols() const { return cols_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  [[nodiscard]] std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() { return data_; }
  [[nodiscard]] std::span<const double> values() const { return data_; }

  [[nodiscard]] std::string shape_string() const;
  [[nodiscard]] bool all_finite() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Numerically stable logistic function; saturates without overflow.
double sigmoid(double z);
/// log(1 + exp(z)) without overflow.
double softplus(double z);
/// log sum_i exp(v_i) via max shift. Throws ArgumentError on empty input.
double log_sum_exp(std::span<const double> values);

/// Rows taken in the given order.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices);
/// [a | b | ...] column-wise concatenation; all blocks need the same row count.
Matrix concat_columns(std::span<const Matrix* const> blocks);
Matrix transpose(const Matrix& m);

/// m[r][c] += bias[c]
void add_row_vector(Matrix& m, std::span<const double> bias);
void sigmoid_inplace(Matrix& m);
void sigmoid_inplace(std::span<double> v);
Vector column_means(const Matrix& m);

double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> v);

}  // namespace deepmix
