#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace obsmult {

enum class ErrorKind {
  MissingLabelColumn,
  NonNumericCell,
  InvalidLabelValue,
  EmptyDataset,
  InvalidDataset,
  ProbOutOfRange,
  DimensionMismatch,
  LengthMismatch,
  FitDiverged,
  SingularHessian,
  NoConvergence,
  SingleClass,
  InitialFitFailed,
  TooFewResamples,
  RefitFallbackExhausted,
  TooLarge,
  ZeroNormPoint,
  EmptyKeptSet,
  EmptyPool,
  InvalidConfig,
  IoError,
};

constexpr std::string_view error_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingLabelColumn: return "MissingLabelColumn";
    case ErrorKind::NonNumericCell: return "NonNumericCell";
    case ErrorKind::InvalidLabelValue: return "InvalidLabelValue";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::InvalidDataset: return "InvalidDataset";
    case ErrorKind::ProbOutOfRange: return "ProbOutOfRange";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::FitDiverged: return "FitDiverged";
    case ErrorKind::SingularHessian: return "SingularHessian";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::InitialFitFailed: return "InitialFitFailed";
    case ErrorKind::TooFewResamples: return "TooFewResamples";
    case ErrorKind::RefitFallbackExhausted: return "RefitFallbackExhausted";
    case ErrorKind::TooLarge: return "TooLarge";
    case ErrorKind::ZeroNormPoint: return "ZeroNormPoint";
    case ErrorKind::EmptyKeptSet: return "EmptyKeptSet";
    case ErrorKind::EmptyPool: return "EmptyPool";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library. `kind()` is the stable, machine-readable
/// part; `what()` carries "<Kind>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string(error_name(kind)) + ": " + detail), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::string_view name() const noexcept { return error_name(kind_); }

 private:
  ErrorKind kind_;
};

/// True for the failures a logistic refit can recover from with extra ridge.
inline bool is_fit_failure(ErrorKind kind) {
  return kind == ErrorKind::FitDiverged || kind == ErrorKind::SingularHessian ||
         kind == ErrorKind::NoConvergence;
}

}  // namespace obsmult
