#pragma once

#include <stdexcept>
#include <string>

namespace cme {

enum class ErrorCode {
  // configuration
  InvalidArgument,
  KTooLarge,
  // data
  MissingColumn,
  ParseError,
  EmptyAfterDrop,
  EmptyAfterTrim,
  InvariantViolation,
  EmptyBin,
  NoOverlapInCell,
  FoldMissingTreatmentArm,
  DegenerateTarget,
  DegenerateSample,
  // numerical
  SingularDesign,
  SingularJacobian,
  UnclippedPropensity,
  InsufficientLocalData,
  DegenerateTreatmentResiduals,
  BootstrapDegenerate,
  NonConvergence,
};

enum class ErrorCategory { config, data, numerical };

const char* to_string(ErrorCode code);
ErrorCategory category_of(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, std::string(to_string(code)) + ": " + message);
}

inline void require(bool cond, const std::string& message) {
  if (!cond) fail(ErrorCode::InvalidArgument, message);
}

}  // namespace cme
