// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tpatch {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input or configuration (CLI exit code 1).
class InputError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public InputError {
 public:
  using InputError::InputError;
};

/// A numerical precondition does not hold (CLI exit code 2).
class NumericalError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public NumericalError {
 public:
  SingularMatrixError(std::size_t rank, std::size_t dim, const std::string& what)
      : NumericalError(what), rank_(rank), dim_(dim) {}

  std::size_t rank() const { return rank_; }
  std::size_t dim() const { return dim_; }

 private:
  std::size_t rank_;
  std::size_t dim_;
};

/// The reduced-context attention output is (numerically) zero, so the token
/// matrix is undefined.
class DegenerateAttentionError : public NumericalError {
 public:
  DegenerateAttentionError(std::size_t layer, std::size_t position)
      : NumericalError("degenerate attention output at layer " + std::to_string(layer) +
                       ", position " + std::to_string(position)),
        layer_(layer),
        position_(position) {}

  std::size_t layer() const { return layer_; }
  std::size_t position() const { return position_; }

 private:
  std::size_t layer_;
  std::size_t position_;
};

}  // namespace tpatch
