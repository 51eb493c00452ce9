// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpatch/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <utility>

#include "tpatch/errors.hpp"
#include "tpatch/kernels.hpp"

namespace tpatch {

namespace {

void require_same_length(std::span<const double> u, std::span<const double> v, const char* op) {
  if (u.size() != v.size()) {
    std::ostringstream msg;
    msg << op << ": length mismatch (" << u.size() << " vs " << v.size() << ")";
    throw DimensionError(msg.str());
  }
}

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream msg;
    msg << op << ": shape mismatch (" << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x"
        << b.cols() << ")";
    throw DimensionError(msg.str());
  }
}

}  // namespace

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) throw DimensionError("Mat: data length does not match shape");
}

Mat::Mat(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Mat: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::from_columns(std::span<const Vec> columns) {
  if (columns.empty()) return {};
  const std::size_t rows = columns.front().size();
  Mat m(rows, columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c].size() != rows) throw DimensionError("from_columns: ragged columns");
    for (std::size_t r = 0; r < rows; ++r) m(r, c) = columns[c][r];
  }
  return m;
}

Mat Mat::from_rows(std::span<const Vec> rows) {
  if (rows.empty()) return {};
  const std::size_t cols = rows.front().size();
  Mat m(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw DimensionError("from_rows: ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

Vec Mat::column(std::size_t c) const {
  Vec v(rows_);
  for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
  return v;
}

double dot(std::span<const double> u, std::span<const double> v) {
  require_same_length(u, v, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

Vec add(std::span<const double> u, std::span<const double> v) {
  require_same_length(u, v, "add");
  Vec r(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) r[i] = u[i] + v[i];
  return r;
}

Vec sub(std::span<const double> u, std::span<const double> v) {
  require_same_length(u, v, "sub");
  Vec r(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) r[i] = u[i] - v[i];
  return r;
}

Vec scale(std::span<const double> v, double s) {
  Vec r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) r[i] = v[i] * s;
  return r;
}

double max_abs_diff(std::span<const double> u, std::span<const double> v) {
  require_same_length(u, v, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) m = std::max(m, std::abs(u[i] - v[i]));
  return m;
}

Mat add(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "add");
  Mat r(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.data().size(); ++i) r.data()[i] = a.data()[i] + b.data()[i];
  return r;
}

Mat sub(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "sub");
  Mat r(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.data().size(); ++i) r.data()[i] = a.data()[i] - b.data()[i];
  return r;
}

Mat scale(const Mat& a, double s) {
  Mat r(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.data().size(); ++i) r.data()[i] = a.data()[i] * s;
  return r;
}

Mat transpose(const Mat& a) {
  Mat t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) {
    std::ostringstream msg;
    msg << "matmul: inner dimensions differ (" << a.cols() << " vs " << b.rows() << ")";
    throw DimensionError(msg.str());
  }
  Mat out(a.rows(), b.cols());
  kernels::matmul(a, b, out);
  return out;
}

Vec matvec(const Mat& m, std::span<const double> v) {
  if (m.cols() != v.size()) throw DimensionError("matvec: length mismatch");
  Vec r(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) s += row[j] * v[j];
    r[i] = s;
  }
  return r;
}

double frobenius(const Mat& a) { return norm(a.data()); }

double max_abs(const Mat& a) {
  double m = 0.0;
  for (double x : a.data()) m = std::max(m, std::abs(x));
  return m;
}

double max_abs_diff(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "max_abs_diff");
  return max_abs_diff(a.data(), b.data());
}

double trace(const Mat& a) {
  double t = 0.0;
  for (std::size_t i = 0; i < std::min(a.rows(), a.cols()); ++i) t += a(i, i);
  return t;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

Mat outer(std::span<const double> u, std::span<const double> v) {
  Mat m(u.size(), v.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) m(i, j) = u[i] * v[j];
  return m;
}

Mat cholesky(const Mat& z, double ridge) {
  if (!z.is_square()) throw DimensionError("cholesky: matrix is not square");
  if (ridge < 0.0) throw InputError("cholesky: ridge must be non-negative");
  const std::size_t d = z.rows();
  const double threshold = d == 0 ? 0.0 : 1e-12 * trace(z) / static_cast<double>(d);
  Mat lower(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    double pivot = z(j, j) + ridge;
    for (std::size_t k = 0; k < j; ++k) pivot -= lower(j, k) * lower(j, k);
    const bool singular = ridge == 0.0 ? !(pivot >= threshold && pivot > 0.0) : !(pivot > 0.0);
    if (singular) {
      const std::size_t r = rank(z, 1e-12);
      std::ostringstream msg;
      msg << "Gram matrix is numerically singular (rank " << r << " of " << d
          << "); use a ridge or the corrected solver";
      throw SingularMatrixError(r, d, msg.str());
    }
    lower(j, j) = std::sqrt(pivot);
    for (std::size_t i = j + 1; i < d; ++i) {
      double s = z(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= lower(i, k) * lower(j, k);
      lower(i, j) = s / lower(j, j);
    }
  }
  return lower;
}

Mat solve_right(const Mat& b, const Mat& z, double ridge) {
  if (!z.is_square()) throw DimensionError("solve_right: Z is not square");
  if (b.cols() != z.rows()) throw DimensionError("solve_right: B and Z do not conform");
  const Mat lower = cholesky(z, ridge);
  // M Zs = B  <=>  Zs Mᵀ = Bᵀ, so each row of M solves against the matching row of B.
  Mat out(b.rows(), b.cols());
  kernels::cholesky_solve_rows(lower, b, out);
  return out;
}

std::size_t rank(const Mat& m, double tol) {
  if (m.empty()) return 0;
  Mat a = m;
  const std::size_t rows = a.rows(), cols = a.cols();
  const std::size_t steps = std::min(rows, cols);
  double first = 0.0;
  std::size_t r = 0;
  for (std::size_t k = 0; k < steps; ++k) {
    std::size_t pr = k, pc = k;
    double best = 0.0;
    for (std::size_t i = k; i < rows; ++i)
      for (std::size_t j = k; j < cols; ++j)
        if (std::abs(a(i, j)) > best) {
          best = std::abs(a(i, j));
          pr = i;
          pc = j;
        }
    if (k == 0) first = best;
    if (first == 0.0 || best <= tol * first) break;
    if (pr != k)
      for (std::size_t j = 0; j < cols; ++j) std::swap(a(k, j), a(pr, j));
    if (pc != k)
      for (std::size_t i = 0; i < rows; ++i) std::swap(a(i, k), a(i, pc));
    for (std::size_t i = k + 1; i < rows; ++i) {
      const double f = a(i, k) / a(k, k);
      if (f == 0.0) continue;
      for (std::size_t j = k; j < cols; ++j) a(i, j) -= f * a(k, j);
    }
    ++r;
  }
  return r;
}

double determinant(const Mat& m) {
  if (!m.is_square()) throw DimensionError("determinant: matrix is not square");
  Mat a = m;
  const std::size_t n = a.rows();
  double det = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(p, k))) p = i;
    if (a(p, k) == 0.0) return 0.0;
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(p, j));
      det = -det;
    }
    det *= a(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return det;
}

Mat inverse(const Mat& m) {
  if (!m.is_square()) throw DimensionError("inverse: matrix is not square");
  const std::size_t n = m.rows();
  const double floor = 1e-13 * max_abs(m);
  Mat a = m;
  Mat inv = Mat::identity(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(p, k))) p = i;
    if (!(std::abs(a(p, k)) > floor))
      throw SingularMatrixError(rank(m, 1e-12), n, "inverse: matrix is singular");
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) {
        std::swap(a(k, j), a(p, j));
        std::swap(inv(k, j), inv(p, j));
      }
    }
    const double pivot = a(k, k);
    for (std::size_t j = 0; j < n; ++j) {
      a(k, j) /= pivot;
      inv(k, j) /= pivot;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (i == k || a(i, k) == 0.0) continue;
      const double f = a(i, k);
      for (std::size_t j = 0; j < n; ++j) {
        a(i, j) -= f * a(k, j);
        inv(i, j) -= f * inv(k, j);
      }
    }
  }
  return inv;
}

std::vector<Vec> orthonormal_basis(std::span<const Vec> vectors, double tol) {
  double largest = 0.0;
  for (const Vec& v : vectors) largest = std::max(largest, norm(v));
  std::vector<Vec> basis;
  if (largest == 0.0) return basis;
  for (const Vec& v : vectors) {
    Vec w = v;
    for (int pass = 0; pass < 2; ++pass) {
      for (const Vec& q : basis) {
        const double c = dot(q, w);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= c * q[i];
      }
    }
    const double nw = norm(w);
    if (nw > tol * largest) basis.push_back(scale(w, 1.0 / nw));
  }
  return basis;
}

Vec psd_pivots(const Mat& z) {
  if (!z.is_square()) throw DimensionError("psd_pivots: matrix is not square");
  Mat a = z;
  const std::size_t d = a.rows();
  std::vector<std::size_t> order(d);
  for (std::size_t i = 0; i < d; ++i) order[i] = i;
  Vec pivots;
  pivots.reserve(d);
  for (std::size_t k = 0; k < d; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < d; ++i)
      if (a(order[i], order[i]) > a(order[p], order[p])) p = i;
    std::swap(order[k], order[p]);
    const std::size_t pk = order[k];
    const double pivot = a(pk, pk);
    pivots.push_back(pivot);
    if (!(pivot > 0.0)) {
      for (std::size_t i = k + 1; i < d; ++i) pivots.push_back(a(order[i], order[i]));
      break;
    }
    for (std::size_t i = k + 1; i < d; ++i) {
      const std::size_t oi = order[i];
      const double f = a(oi, pk) / pivot;
      for (std::size_t j = k + 1; j < d; ++j) {
        const std::size_t oj = order[j];
        a(oi, oj) -= f * a(pk, oj);
      }
    }
  }
  return pivots;
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_ = radius * std::sin(angle);
  has_cached_ = true;
  return radius * std::cos(angle);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw InputError("Rng::below: empty range");
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

Vec random_normal_vec(Rng& rng, std::size_t d, double sigma) {
  Vec v(d);
  for (double& x : v) x = sigma * rng.normal();
  return v;
}

Mat random_normal_mat(Rng& rng, std::size_t rows, std::size_t cols, double sigma) {
  Mat m(rows, cols);
  for (double& x : m.data()) x = sigma * rng.normal();
  return m;
}

std::vector<Vec> sample_spherical(std::size_t d, std::size_t n, double sigma, std::uint64_t seed) {
  if (d == 0 || n == 0) throw InputError("sample_spherical: d and n must be positive");
  if (sigma < 0.0) throw InputError("sample_spherical: sigma must be non-negative");
  Rng rng(seed);
  std::vector<Vec> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_normal_vec(rng, d, sigma));
  return out;
}

Mat random_orthogonal(std::size_t d, std::uint64_t seed) {
  if (d == 0) throw InputError("random_orthogonal: d must be positive");
  Rng rng(seed);
  std::vector<Vec> columns;
  columns.reserve(d);
  for (std::size_t i = 0; i < d; ++i) columns.push_back(random_normal_vec(rng, d));
  std::vector<Vec> basis = orthonormal_basis(columns, 1e-8);
  // A Gaussian matrix is singular with probability zero; complete from e_i if it happens.
  for (std::size_t i = 0; basis.size() < d && i < d; ++i) {
    Vec e(d, 0.0);
    e[i] = 1.0;
    basis.push_back(e);
    std::vector<Vec> redo = orthonormal_basis(basis, 1e-8);
    basis = std::move(redo);
  }
  return Mat::from_columns(basis);
}

void GramAccumulator::add(std::span<const double> delta, std::span<const double> a) {
  const Vec dv(delta.begin(), delta.end());
  const Vec av(a.begin(), a.end());
  add_batch(std::span<const Vec>(&dv, 1), std::span<const Vec>(&av, 1));
}

void GramAccumulator::add_batch(std::span<const Vec> deltas, std::span<const Vec> attns) {
  if (deltas.size() != attns.size()) throw DimensionError("GramAccumulator: pair count mismatch");
  for (std::size_t k = 0; k < attns.size(); ++k) {
    if (attns[k].size() != dim() || deltas[k].size() != dim())
      throw DimensionError("GramAccumulator: vector width does not match accumulator");
  }
  kernels::gram_update(deltas, attns, z_, b_);
  count_ += attns.size();
}

}  // namespace tpatch
