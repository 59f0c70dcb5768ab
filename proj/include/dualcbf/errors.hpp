#pragma once

#include <stdexcept>
#include <string>

namespace dualcbf {

enum class ErrorCode {
  DimensionMismatch,
  InvalidPose,
  EmptyInterior,
  Unbounded,
  RedundantRow,
  DegenerateVertex,
  NotPsd,
  SolverFailure,
  DualDegenerate,
  DualMismatch,
  SafetyViolated,
  EmptyFleet,
  SwitchNearby,
  Config,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidPose: return "InvalidPose";
    case ErrorCode::EmptyInterior: return "EmptyInterior";
    case ErrorCode::Unbounded: return "Unbounded";
    case ErrorCode::RedundantRow: return "RedundantRow";
    case ErrorCode::DegenerateVertex: return "DegenerateVertex";
    case ErrorCode::NotPsd: return "NotPsd";
    case ErrorCode::SolverFailure: return "SolverFailure";
    case ErrorCode::DualDegenerate: return "DualDegenerate";
    case ErrorCode::DualMismatch: return "DualMismatch";
    case ErrorCode::SafetyViolated: return "SafetyViolated";
    case ErrorCode::EmptyFleet: return "EmptyFleet";
    case ErrorCode::SwitchNearby: return "SwitchNearby";
    case ErrorCode::Config: return "Config";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable code. `index()` is the offending
/// row for RedundantRow and -1 otherwise.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what, int index = -1)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code),
        index_(index) {}

  ErrorCode code() const noexcept { return code_; }
  int index() const noexcept { return index_; }

 private:
  ErrorCode code_;
  int index_;
};

}  // namespace dualcbf
