#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fmstat {

enum class ErrorCode {
  DimensionMismatch,
  NotPositiveDefinite,
  NoConvergence,
  Overflow,
  EmptyBatch,
  EmptySample,
  EmptyInput,
  Divergence,
  SingularSystem,
  DimensionTooSmall,
  NotSquare,
  NonFinite,
  TooFewSamples,
  TooFewRows,
  TooFewComplete,
  TooFewImputations,
  BadK,
  ArmMissing,
  DegenerateMoments,
  SingularDesign,
  BadColumns,
  NoSolutionInBracket,
  OutOfUnitInterval,
  InvalidArgument,
  ConfigInvalid,
  ExperimentFailed,
  Io,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Library-wide exception. The code is stable and machine readable; the
/// message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) [[unlikely]] fail(code, what);
}

// Literal messages skip the std::string construction on the passing path.
inline void require(bool cond, ErrorCode code, const char* what) {
  if (!cond) [[unlikely]] fail(code, what);
}

}  // namespace fmstat
