#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sparse_drift {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kMalformedFile,
  kNonFiniteState,
  kDegenerateDiffusion,
  kInfeasible,
  kPivotLimit,
  kRefitSingular,
  kNoFeasibleGridPoint,
  kIo,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kMalformedFile: return "malformed-file";
    case ErrorCode::kNonFiniteState: return "non-finite-state";
    case ErrorCode::kDegenerateDiffusion: return "degenerate-diffusion";
    case ErrorCode::kInfeasible: return "infeasible";
    case ErrorCode::kPivotLimit: return "pivot-limit";
    case ErrorCode::kRefitSingular: return "refit-singular";
    case ErrorCode::kNoFeasibleGridPoint: return "no-feasible-grid-point";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Error raised while processing one drift row; keeps the row index.
class RowError : public Error {
 public:
  RowError(std::size_t row, const Error& inner)
      : Error(inner.code(), "row " + std::to_string(row) + ": " + inner.what()), row_(row) {}

  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace sparse_drift
