#pragma once

// Reference computations written independently of the library's kernels.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

#include "deepmix/numerics.hpp"

namespace oracle {

using deepmix::Matrix;
using deepmix::Prng;
using deepmix::Vector;

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += (long double)a(i, p) * b(p, j);
      c(i, j) = (double)s;
    }
  return c;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline Matrix random_matrix(std::size_t r, std::size_t c, Prng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = lo + (hi - lo) * rng.uniform();
  return m;
}

inline Vector random_vector(std::size_t n, Prng& rng, double lo = -1.0, double hi = 1.0) {
  Vector v(n);
  for (double& x : v) x = lo + (hi - lo) * rng.uniform();
  return v;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

inline bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

// Returns an empty string when no MNIST directory is configured.
inline std::string mnist_dir() {
  if (const char* env = std::getenv("DEEPMIX_MNIST_DIR"); env && *env) return env;
  return DEEPMIX_MNIST_DIR;
}

}  // namespace oracle
