// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace vtryon {

enum class ErrorKind {
  kInvalidRange,
  kShapeMismatch,
  kTimestepOutOfRange,
  kOrdering,
  kDivisibility,
  kInvalidConfig,
  kEmptyDataset,
  kDivergence,
  kMissingSupervision,
  kMissingCheckpoint,
  kResumeMismatch,
  kLayout,
  kIo,
  kFormat,
  kUnknownKey,
  kNonFinite,
  kDegenerateInput,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void raise(ErrorKind kind, const std::string& what);

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) raise(kind, what);
}

}  // namespace vtryon
