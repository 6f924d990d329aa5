// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtryon/error.hpp"

namespace vtryon {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidRange: return "invalid-range";
    case ErrorKind::kShapeMismatch: return "shape-mismatch";
    case ErrorKind::kTimestepOutOfRange: return "timestep-out-of-range";
    case ErrorKind::kOrdering: return "ordering";
    case ErrorKind::kDivisibility: return "dimension-divisibility";
    case ErrorKind::kInvalidConfig: return "invalid-config";
    case ErrorKind::kEmptyDataset: return "empty-dataset";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kMissingSupervision: return "missing-supervision";
    case ErrorKind::kMissingCheckpoint: return "missing-checkpoint";
    case ErrorKind::kResumeMismatch: return "resume-mismatch";
    case ErrorKind::kLayout: return "malformed-layout";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kUnknownKey: return "unknown-key";
    case ErrorKind::kNonFinite: return "non-finite";
    case ErrorKind::kDegenerateInput: return "degenerate-input";
  }
  return "unknown";
}

void raise(ErrorKind kind, const std::string& what) {
  throw Error(kind, std::string(to_string(kind)) + " error: " + what);
}

}  // namespace vtryon
