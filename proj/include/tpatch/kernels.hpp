// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0
//
// Hot loops of the library. Every kernel has a serial reference and an OpenMP
// version. The OpenMP versions split work over output rows only, so each
// output element is accumulated in the same order as the serial loop and the
// two agree bitwise for any thread count.

#pragma once

#include <cstddef>
#include <span>

#include "tpatch/linalg.hpp"

namespace tpatch::kernels {

namespace serial {

/// out = a * b. `out` must be pre-sized a.rows() x b.cols().
void matmul(const Mat& a, const Mat& b, Mat& out);

/// z += Σ_k attns[k] attns[k]ᵀ, b += Σ_k deltas[k] attns[k]ᵀ, k in order.
void gram_update(std::span<const Vec> deltas, std::span<const Vec> attns, Mat& z, Mat& b);

/// out[p] = w * xs[p] for every p.
void project_rows(const Mat& w, std::span<const Vec> xs, std::span<Vec> out);

/// Row-wise solve of M L Lᵀ = B given the lower Cholesky factor L.
void cholesky_solve_rows(const Mat& lower, const Mat& b, Mat& out);

}  // namespace serial

namespace parallel {

void matmul(const Mat& a, const Mat& b, Mat& out);
void gram_update(std::span<const Vec> deltas, std::span<const Vec> attns, Mat& z, Mat& b);
void project_rows(const Mat& w, std::span<const Vec> xs, std::span<Vec> out);
void cholesky_solve_rows(const Mat& lower, const Mat& b, Mat& out);

}  // namespace parallel

// Dispatch: parallel when built with OpenMP, serial otherwise.
void matmul(const Mat& a, const Mat& b, Mat& out);
void gram_update(std::span<const Vec> deltas, std::span<const Vec> attns, Mat& z, Mat& b);
void project_rows(const Mat& w, std::span<const Vec> xs, std::span<Vec> out);
void cholesky_solve_rows(const Mat& lower, const Mat& b, Mat& out);

/// True when the parallel kernels were compiled with OpenMP.
bool have_openmp();
int max_threads();
void set_threads(int n);

}  // namespace tpatch::kernels
