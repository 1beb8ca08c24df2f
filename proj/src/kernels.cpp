#include "deepmix/kernels.hpp"

#include <omp.h>

#include <algorithm>

#include "deepmix/errors.hpp"

namespace deepmix {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

void check_inner(const char* op, std::size_t lhs, std::size_t rhs, const Matrix& a,
                 const Matrix& b) {
  if (lhs != rhs) {
    throw ShapeError(std::string(op) + ": dimension mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

void check_vec(const char* op, std::size_t expected, std::size_t got, const Matrix& a) {
  if (expected != got) {
    throw ShapeError(std::string(op) + ": vector length " + std::to_string(got) +
                     " incompatible with " + a.shape_string());
  }
}

}  // namespace

namespace kernels {

Matrix matmul(const Matrix& a, const Matrix& b) {
  check_inner("matmul", a.cols(), b.rows(), a, b);
  Matrix c(a.rows(), b.cols());
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
  const std::size_t inner = a.cols();
  const std::size_t cols = b.cols();
#pragma omp parallel for schedule(static) if (a.rows() * inner * cols > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    double* out = c.row(static_cast<std::size_t>(i)).data();
    const double* arow = a.row(static_cast<std::size_t>(i)).data();
    for (std::size_t p = 0; p < inner; ++p) {
      const double scale = arow[p];
      const double* brow = b.row(p).data();
      for (std::size_t j = 0; j < cols; ++j) out[j] += scale * brow[j];
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  check_inner("matmul_tn", a.rows(), b.rows(), a, b);
  Matrix c(a.cols(), b.cols());
  const auto rows = static_cast<std::ptrdiff_t>(a.cols());
  const std::size_t inner = a.rows();
  const std::size_t cols = b.cols();
#pragma omp parallel for schedule(static) if (a.cols() * inner * cols > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    double* out = c.row(static_cast<std::size_t>(i)).data();
    for (std::size_t p = 0; p < inner; ++p) {
      const double scale = a(p, static_cast<std::size_t>(i));
      const double* brow = b.row(p).data();
      for (std::size_t j = 0; j < cols; ++j) out[j] += scale * brow[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  check_inner("matmul_nt", a.cols(), b.cols(), a, b);
  return matmul(a, transpose(b));
}

Vector matvec(const Matrix& a, std::span<const double> x) {
  check_vec("matvec", a.cols(), x.size(), a);
  Vector y(a.rows(), 0.0);
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static) if (a.size() > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const double* arow = a.row(static_cast<std::size_t>(i)).data();
    double acc = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) acc += arow[j] * x[j];
    y[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

Vector matvec_t(const Matrix& a, std::span<const double> x) {
  check_vec("matvec_t", a.rows(), x.size(), a);
  Vector y(a.cols(), 0.0);
  const std::size_t cols = a.cols();
#pragma omp parallel if (a.size() > kParallelWork)
  {
    // Each thread owns a contiguous column band and walks rows in order.
    const auto nthreads = static_cast<std::size_t>(omp_get_num_threads());
    const auto tid = static_cast<std::size_t>(omp_get_thread_num());
    const std::size_t band = (cols + nthreads - 1) / nthreads;
    const std::size_t lo = std::min(cols, tid * band);
    const std::size_t hi = std::min(cols, lo + band);
    for (std::size_t i = 0; i < a.rows(); ++i) {
      const double scale = x[i];
      const double* arow = a.row(i).data();
      for (std::size_t j = lo; j < hi; ++j) y[j] += scale * arow[j];
    }
  }
  return y;
}

Matrix sq_distances(const Matrix& a, const Matrix& b) {
  check_inner("sq_distances", a.cols(), b.cols(), a, b);
  Matrix out(a.rows(), b.rows());
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
  const std::size_t dim = a.cols();
#pragma omp parallel for schedule(static) if (a.rows() * b.rows() * dim > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const double* arow = a.row(static_cast<std::size_t>(i)).data();
    double* orow = out.row(static_cast<std::size_t>(i)).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* brow = b.row(j).data();
      double acc = 0.0;
      for (std::size_t p = 0; p < dim; ++p) {
        const double d = arow[p] - brow[p];
        acc += d * d;
      }
      orow[j] = acc;
    }
  }
  return out;
}

}  // namespace kernels

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b) {
  check_inner("matmul", a.cols(), b.rows(), a, b);
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(p, j);
      c(i, j) = acc;
    }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  check_inner("matmul_tn", a.rows(), b.rows(), a, b);
  Matrix c(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < a.rows(); ++p) acc += a(p, i) * b(p, j);
      c(i, j) = acc;
    }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  check_inner("matmul_nt", a.cols(), b.cols(), a, b);
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(j, p);
      c(i, j) = acc;
    }
  return c;
}

Vector matvec(const Matrix& a, std::span<const double> x) {
  check_vec("matvec", a.cols(), x.size(), a);
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) acc += a(i, j) * x[j];
    y[i] = acc;
  }
  return y;
}

Vector matvec_t(const Matrix& a, std::span<const double> x) {
  check_vec("matvec_t", a.rows(), x.size(), a);
  Vector y(a.cols(), 0.0);
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) acc += a(i, j) * x[i];
    y[j] = acc;
  }
  return y;
}

Matrix sq_distances(const Matrix& a, const Matrix& b) {
  check_inner("sq_distances", a.cols(), b.cols(), a, b);
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = squared_distance(a.row(i), b.row(j));
  return out;
}

}  // namespace serial

}  // namespace deepmix
