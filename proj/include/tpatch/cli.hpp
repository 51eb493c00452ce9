// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "tpatch/model.hpp"

namespace tpatch {

enum ExitCode : int {
  kExitOk = 0,
  kExitInput = 1,
  kExitNumerical = 2,
  kExitVerification = 3,
};

/// Entry point behind the `tpatch` binary; `args` excludes the program name.
/// Relative output paths are resolved against $TPATCH_OUT_DIR when it is set.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Toy sum task: "<user> a + b + c = <model> s" with operands in [0, 10].
namespace sumtask {
inline constexpr TokenId kPlus = 31;
inline constexpr TokenId kEquals = 32;
inline constexpr TokenId kUser = 33;
inline constexpr TokenId kModel = 34;
inline constexpr std::size_t kMinVocab = 38;
/// "Sum the numbers".
std::vector<TokenId> instruction();
std::vector<std::vector<TokenId>> generate(std::size_t count, std::uint64_t seed);
}  // namespace sumtask

}  // namespace tpatch
