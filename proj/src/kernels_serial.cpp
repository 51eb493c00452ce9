// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpatch/kernels.hpp"

namespace tpatch::kernels::serial {

void matmul(const Mat& a, const Mat& b, Mat& out) {
  const std::size_t n = a.rows(), m = a.cols(), p = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    auto out_row = out.row(i);
    for (std::size_t j = 0; j < p; ++j) out_row[j] = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const double aik = a(i, k);
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < p; ++j) out_row[j] += aik * b_row[j];
    }
  }
}

void gram_update(std::span<const Vec> deltas, std::span<const Vec> attns, Mat& z, Mat& b) {
  const std::size_t d = z.rows();
  for (std::size_t k = 0; k < attns.size(); ++k) {
    const Vec& a = attns[k];
    const Vec& delta = deltas[k];
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        z(i, j) += a[i] * a[j];
        b(i, j) += delta[i] * a[j];
      }
    }
  }
}

void project_rows(const Mat& w, std::span<const Vec> xs, std::span<Vec> out) {
  for (std::size_t p = 0; p < xs.size(); ++p) {
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
  Vec y(d);
  for (std::size_t r = 0; r < b.rows(); ++r) {
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

}  // namespace tpatch::kernels::serial
