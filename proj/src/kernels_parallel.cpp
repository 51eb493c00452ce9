// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpatch/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tpatch::kernels {

namespace parallel {

void matmul(const Mat& a, const Mat& b, Mat& out) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(a.rows());
  const std::size_t m = a.cols(), p = b.cols();
#pragma omp parallel for schedule(static) if (n * m * p > 32768)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    auto out_row = out.row(static_cast<std::size_t>(i));
    for (std::size_t j = 0; j < p; ++j) out_row[j] = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const double aik = a(static_cast<std::size_t>(i), k);
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < p; ++j) out_row[j] += aik * b_row[j];
    }
  }
}

void gram_update(std::span<const Vec> deltas, std::span<const Vec> attns, Mat& z, Mat& b) {
  const std::ptrdiff_t d = static_cast<std::ptrdiff_t>(z.rows());
  const std::size_t n = attns.size();
  // Row i of Z and B only reads column i of the inputs, so rows are independent.
#pragma omp parallel for schedule(static) if (static_cast<std::size_t>(d * d) * n > 32768)
  for (std::ptrdiff_t is = 0; is < d; ++is) {
    const auto i = static_cast<std::size_t>(is);
    auto z_row = z.row(i);
    auto b_row = b.row(i);
    for (std::size_t k = 0; k < n; ++k) {
      const Vec& a = attns[k];
      const double ai = a[i];
      const double di = deltas[k][i];
      for (std::size_t j = 0; j < a.size(); ++j) {
        z_row[j] += ai * a[j];
        b_row[j] += di * a[j];
      }
    }
  }
}

void project_rows(const Mat& w, std::span<const Vec> xs, std::span<Vec> out) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(xs.size());
#pragma omp parallel for schedule(static) if (static_cast<std::size_t>(n) * w.rows() * w.cols() > 32768)
  for (std::ptrdiff_t ps = 0; ps < n; ++ps) {
    const auto p = static_cast<std::size_t>(ps);
    Vec& y = out[p];
    y.assign(w.rows(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r) {
      auto w_row = w.row(r);
      double acc = 0.0;
      for (std::size_t c = 0; c < w.cols(); ++c) acc += w_row[c] * xs[p][c];
      y[r] = acc;
    }
  }
}

void cholesky_solve_rows(const Mat& lower, const Mat& b, Mat& out) {
  const std::size_t d = lower.rows();
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(b.rows());
#pragma omp parallel for schedule(static) if (static_cast<std::size_t>(rows) * d * d > 32768)
  for (std::ptrdiff_t rs = 0; rs < rows; ++rs) {
    const auto r = static_cast<std::size_t>(rs);
    Vec y(d);
    auto rhs = b.row(r);
    for (std::size_t i = 0; i < d; ++i) {
      double s = rhs[i];
      for (std::size_t k = 0; k < i; ++k) s -= lower(i, k) * y[k];
      y[i] = s / lower(i, i);
    }
    auto x = out.row(r);
    for (std::size_t ii = d; ii-- > 0;) {
      double s = y[ii];
      for (std::size_t k = ii + 1; k < d; ++k) s -= lower(k, ii) * x[k];
      x[ii] = s / lower(ii, ii);
    }
  }
}

}  // namespace parallel

#ifdef _OPENMP
void matmul(const Mat& a, const Mat& b, Mat& out) { parallel::matmul(a, b, out); }
void gram_update(std::span<const Vec> deltas, std::span<const Vec> attns, Mat& z, Mat& b) {
  parallel::gram_update(deltas, attns, z, b);
}
void project_rows(const Mat& w, std::span<const Vec> xs, std::span<Vec> out) {
  parallel::project_rows(w, xs, out);
}
void cholesky_solve_rows(const Mat& lower, const Mat& b, Mat& out) {
  parallel::cholesky_solve_rows(lower, b, out);
}
bool have_openmp() { return true; }
int max_threads() { return omp_get_max_threads(); }
void set_threads(int n) { omp_set_num_threads(n); }
#else
void matmul(const Mat& a, const Mat& b, Mat& out) { serial::matmul(a, b, out); }
void gram_update(std::span<const Vec> deltas, std::span<const Vec> attns, Mat& z, Mat& b) {
  serial::gram_update(deltas, attns, z, b);
}
void project_rows(const Mat& w, std::span<const Vec> xs, std::span<Vec> out) {
  serial::project_rows(w, xs, out);
}
void cholesky_solve_rows(const Mat& lower, const Mat& b, Mat& out) {
  serial::cholesky_solve_rows(lower, b, out);
}
bool have_openmp() { return false; }
int max_threads() { return 1; }
void set_threads(int) {}
#endif

}  // namespace tpatch::kernels
