#pragma once

#include <stdexcept>
#include <string>

namespace isoscope {

enum class ErrorCode {
  // usage
  UnknownFlag,
  MissingInput,
  InvalidArgument,
  // data
  DimensionTooSmall,
  DimensionMismatch,
  NonFiniteInput,
  NegativeVariance,
  ZeroVectorSampled,
  ZeroVectorRow,
  DuplicatePoints,
  TooFewPoints,
  SampleTooSmall,
  CorruptHeader,
  RaggedCsv,
  NonNumericCell,
  IoFailure,
  ConfigError,
  HashMismatch,
  // numerical
  ConvergenceFailure,
  NotPositiveSemidefinite,
  ZeroSpectrum,
  DegenerateSpectrum,
  OverflowGuard,
};

enum class ErrorCategory { Usage, Data, Numerical };

constexpr ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownFlag:
    case ErrorCode::MissingInput:
    case ErrorCode::InvalidArgument:
      return ErrorCategory::Usage;
    case ErrorCode::ConvergenceFailure:
    case ErrorCode::NotPositiveSemidefinite:
    case ErrorCode::ZeroSpectrum:
    case ErrorCode::DegenerateSpectrum:
    case ErrorCode::OverflowGuard:
      return ErrorCategory::Numerical;
    default:
      return ErrorCategory::Data;
  }
}

/// Process exit code for an error category: 2 usage, 3 data, 4 numerical.
constexpr int exit_code_of(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Usage: return 2;
    case ErrorCategory::Data: return 3;
    case ErrorCategory::Numerical: return 4;
  }
  return 1;
}

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }
  int exit_code() const noexcept { return exit_code_of(category()); }

 private:
  ErrorCode code_;
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownFlag: return "UnknownFlag";
    case ErrorCode::MissingInput: return "MissingInput";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionTooSmall: return "DimensionTooSmall";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::NegativeVariance: return "NegativeVariance";
    case ErrorCode::ZeroVectorSampled: return "ZeroVectorSampled";
    case ErrorCode::ZeroVectorRow: return "ZeroVectorRow";
    case ErrorCode::DuplicatePoints: return "DuplicatePoints";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::SampleTooSmall: return "SampleTooSmall";
    case ErrorCode::CorruptHeader: return "CorruptHeader";
    case ErrorCode::RaggedCsv: return "RaggedCsv";
    case ErrorCode::NonNumericCell: return "NonNumericCell";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::HashMismatch: return "HashMismatch";
    case ErrorCode::ConvergenceFailure: return "ConvergenceFailure";
    case ErrorCode::NotPositiveSemidefinite: return "NotPositiveSemidefinite";
    case ErrorCode::ZeroSpectrum: return "ZeroSpectrum";
    case ErrorCode::DegenerateSpectrum: return "DegenerateSpectrum";
    case ErrorCode::OverflowGuard: return "OverflowGuard";
  }
  return "Unknown";
}

}  // namespace isoscope
