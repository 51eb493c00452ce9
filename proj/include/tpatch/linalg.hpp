// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrices and the handful of factorizations the patch math
// needs. Everything is 64-bit and deterministic.

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace tpatch {

using Vec = std::vector<double>;

class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data);
  Mat(std::initializer_list<std::initializer_list<double>> rows);

  static Mat identity(std::size_t n);
  /// Matrix whose columns are the given vectors.
  static Mat from_columns(std::span<const Vec> columns);
  static Mat from_rows(std::span<const Vec> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }
  bool is_square() const { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  Vec column(std::size_t c) const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool operator==(const Mat&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Vector helpers.
double dot(std::span<const double> u, std::span<const double> v);
double norm(std::span<const double> v);
Vec add(std::span<const double> u, std::span<const double> v);
Vec sub(std::span<const double> u, std::span<const double> v);
Vec scale(std::span<const double> v, double s);
double max_abs_diff(std::span<const double> u, std::span<const double> v);

// Matrix helpers.
Mat add(const Mat& a, const Mat& b);
Mat sub(const Mat& a, const Mat& b);
Mat scale(const Mat& a, double s);
Mat transpose(const Mat& a);
Mat matmul(const Mat& a, const Mat& b);
Vec matvec(const Mat& m, std::span<const double> v);
double frobenius(const Mat& a);
double max_abs(const Mat& a);
double max_abs_diff(const Mat& a, const Mat& b);
double trace(const Mat& a);
bool all_finite(std::span<const double> v);

/// u vᵀ. Throws DimensionError when the lengths differ.
Mat outer(std::span<const double> u, std::span<const double> v);

/// Lower-triangular Cholesky factor of `z + ridge * I`.
///
/// With ridge == 0 a pivot below 1e-12 * trace(z) / d is treated as singular and
/// reported with the numerical rank of z. With ridge > 0 only a non-positive
/// pivot is an error.
Mat cholesky(const Mat& z, double ridge = 0.0);

/// Returns M with M (Z + ridge I) = B, via Cholesky of the symmetric Z.
Mat solve_right(const Mat& b, const Mat& z, double ridge = 0.0);

/// Numerical rank by Gaussian elimination with complete pivoting: counts
/// pivots larger than tol times the first (largest) pivot.
std::size_t rank(const Mat& m, double tol = 1e-10);

/// Determinant by LU with partial pivoting.
double determinant(const Mat& m);

/// Gauss-Jordan inverse with partial pivoting. A pivot below 1e-13 times the
/// largest entry raises SingularMatrixError.
Mat inverse(const Mat& m);

/// Orthonormal basis of span(vectors) by twice-iterated modified Gram-Schmidt.
/// Vectors whose residual falls below tol times the largest input norm are dropped.
std::vector<Vec> orthonormal_basis(std::span<const Vec> vectors, double tol = 1e-10);

/// Diagonal pivots of a symmetrically pivoted Cholesky (LDLᵀ) of a PSD matrix,
/// in elimination order. Small or negative trailing pivots signal rank deficiency.
Vec psd_pivots(const Mat& z);

/// Deterministic generator: mt19937_64 bits, Box-Muller normals. Avoids
/// std::normal_distribution so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double normal();
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

Vec random_normal_vec(Rng& rng, std::size_t d, double sigma = 1.0);
Mat random_normal_mat(Rng& rng, std::size_t rows, std::size_t cols, double sigma = 1.0);

/// n i.i.d. isotropic Gaussian vectors with per-coordinate variance sigma².
std::vector<Vec> sample_spherical(std::size_t d, std::size_t n, double sigma, std::uint64_t seed);

/// Orthonormalization of a seeded Gaussian matrix; columns are orthonormal.
Mat random_orthogonal(std::size_t d, std::uint64_t seed);

/// Running Z = Σ a aᵀ and B = Σ δ aᵀ. Rows are folded in insertion order so the
/// result is bit-reproducible.
class GramAccumulator {
 public:
  explicit GramAccumulator(std::size_t d) : z_(d, d), b_(d, d) {}

  void add(std::span<const double> delta, std::span<const double> a);
  /// Adds every (deltas[i], attns[i]) pair. Same result as repeated add().
  void add_batch(std::span<const Vec> deltas, std::span<const Vec> attns);

  const Mat& z() const { return z_; }
  const Mat& b() const { return b_; }
  std::size_t count() const { return count_; }
  std::size_t dim() const { return z_.rows(); }

 private:
  Mat z_;
  Mat b_;
  std::size_t count_ = 0;
};

}  // namespace tpatch
