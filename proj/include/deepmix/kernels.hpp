#pragma once

// Dense kernels shared by every model. Two implementations with identical
// contracts:
//   deepmix::kernels  OpenMP-parallel over output rows (or columns)
//   deepmix::serial   plain loops, kept as the reference for tests/benchmarks
//
// Every output entry is accumulated by exactly one thread in increasing
// index order starting from 0.0, so both namespaces agree bit-for-bit and
// results do not depend on the thread count. The build disables FMA
// contraction to keep that true across targets.

#include <span>

#include "deepmix/numerics.hpp"

namespace deepmix::kernels {

/// a * b
Matrix matmul(const Matrix& a, const Matrix& b);
/// transpose(a) * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a * transpose(b)
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// a * x
Vector matvec(const Matrix& a, std::span<const double> x);
/// transpose(a) * x
Vector matvec_t(const Matrix& a, std::span<const double> x);
/// out(i, j) = ||a_i - b_j||^2, summed coordinate by coordinate.
Matrix sq_distances(const Matrix& a, const Matrix& b);

}  // namespace deepmix::kernels

namespace deepmix::serial {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, std::span<const double> x);
Vector matvec_t(const Matrix& a, std::span<const double> x);
Matrix sq_distances(const Matrix& a, const Matrix& b);

}  // namespace deepmix::serial
