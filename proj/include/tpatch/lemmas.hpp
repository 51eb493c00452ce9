// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0
//
// Executable checks of the low-rank operator facts the solvers rely on.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace tpatch {

struct LemmaOptions {
  std::uint64_t seed = 0;
  std::vector<std::size_t> sizes = {4, 8, 16};
  std::size_t spherical_dim = 16;
  std::size_t spherical_samples = 100000;
  /// Replace the last basis vector by a combination of the others.
  bool inject_rank_deficiency = false;
};

struct LemmaResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<LemmaResult> run_lemmas(const LemmaOptions& options);

// Individual lemmas, each over every size in options.sizes where applicable.
LemmaResult lemma_rank_bound(const LemmaOptions& options);
LemmaResult lemma_span_iff_invertible(const LemmaOptions& options);
LemmaResult lemma_basis_inverse(const LemmaOptions& options);
LemmaResult lemma_orthonormal_identity(const LemmaOptions& options);
LemmaResult lemma_orthogonal_invariance(const LemmaOptions& options);
LemmaResult lemma_spherical_concentration(const LemmaOptions& options);
LemmaResult lemma_trace_identity(const LemmaOptions& options);
LemmaResult lemma_normal_equations(const LemmaOptions& options);
LemmaResult lemma_gradient(const LemmaOptions& options);
LemmaResult lemma_nonuniqueness(const LemmaOptions& options);

}  // namespace tpatch
