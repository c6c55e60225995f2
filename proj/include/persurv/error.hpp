#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace persurv {

enum class ErrorCode {
  kValidation,
  kDisconnectedNetwork,
  kOffRoad,
  kExhaustedRejection,
  kDeadlock,
  kInfeasibleAction,
  kTooManyEndpoints,
  kNoFeasibleSortie,
  kTooLarge,
  kDivisionByZero,
  kShapeMismatch,
  kAllMasked,
  kFormatVersionMismatch,
  kCorruptFile,
  kNonFiniteGradient,
  kDegenerateSample,
  kInstanceSetMismatch,
  kIo,
  kNotFound,
  kConflict,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; the code selects the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kValidation: return "Validation";
    case ErrorCode::kDisconnectedNetwork: return "DisconnectedNetwork";
    case ErrorCode::kOffRoad: return "OffRoad";
    case ErrorCode::kExhaustedRejection: return "ExhaustedRejection";
    case ErrorCode::kDeadlock: return "Deadlock";
    case ErrorCode::kInfeasibleAction: return "InfeasibleAction";
    case ErrorCode::kTooManyEndpoints: return "TooManyEndpoints";
    case ErrorCode::kNoFeasibleSortie: return "NoFeasibleSortie";
    case ErrorCode::kTooLarge: return "TooLarge";
    case ErrorCode::kDivisionByZero: return "DivisionByZero";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kAllMasked: return "AllMasked";
    case ErrorCode::kFormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorCode::kCorruptFile: return "CorruptFile";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kDegenerateSample: return "DegenerateSample";
    case ErrorCode::kInstanceSetMismatch: return "InstanceSetMismatch";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kNotFound: return "NotFound";
    case ErrorCode::kConflict: return "Conflict";
  }
  return "Unknown";
}

}  // namespace persurv
