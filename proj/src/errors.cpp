#include "cme/errors.hpp"

namespace cme {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyAfterDrop: return "EmptyAfterDrop";
    case ErrorCode::EmptyAfterTrim: return "EmptyAfterTrim";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::EmptyBin: return "EmptyBin";
    case ErrorCode::NoOverlapInCell: return "NoOverlapInCell";
    case ErrorCode::FoldMissingTreatmentArm: return "FoldMissingTreatmentArm";
    case ErrorCode::DegenerateTarget: return "DegenerateTarget";
    case ErrorCode::DegenerateSample: return "DegenerateSample";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::SingularJacobian: return "SingularJacobian";
    case ErrorCode::UnclippedPropensity: return "UnclippedPropensity";
    case ErrorCode::InsufficientLocalData: return "InsufficientLocalData";
    case ErrorCode::DegenerateTreatmentResiduals: return "DegenerateTreatmentResiduals";
    case ErrorCode::BootstrapDegenerate: return "BootstrapDegenerate";
    case ErrorCode::NonConvergence: return "NonConvergence";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::KTooLarge:
      return ErrorCategory::config;
    case ErrorCode::MissingColumn:
    case ErrorCode::ParseError:
    case ErrorCode::EmptyAfterDrop:
    case ErrorCode::EmptyAfterTrim:
    case ErrorCode::InvariantViolation:
    case ErrorCode::EmptyBin:
    case ErrorCode::NoOverlapInCell:
    case ErrorCode::FoldMissingTreatmentArm:
    case ErrorCode::DegenerateTarget:
    case ErrorCode::DegenerateSample:
      return ErrorCategory::data;
    default:
      return ErrorCategory::numerical;
  }
}

}  // namespace cme
