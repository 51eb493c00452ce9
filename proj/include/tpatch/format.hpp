// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>

namespace tpatch {

/// Shortest decimal that parses back to the same double.
std::string format_double(double x);

/// Strict parse of a whole string; throws InputError on trailing garbage.
double parse_double(std::string_view text);
unsigned long long parse_unsigned(std::string_view text);

}  // namespace tpatch
