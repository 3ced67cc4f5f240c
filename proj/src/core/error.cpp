#include "fmstat/error.hpp"

namespace fmstat {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::Overflow: return "Overflow";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::EmptySample: return "EmptySample";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::Divergence: return "Divergence";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::DimensionTooSmall: return "DimensionTooSmall";
    case ErrorCode::NotSquare: return "NotSquare";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::TooFewComplete: return "TooFewComplete";
    case ErrorCode::TooFewImputations: return "TooFewImputations";
    case ErrorCode::BadK: return "BadK";
    case ErrorCode::ArmMissing: return "ArmMissing";
    case ErrorCode::DegenerateMoments: return "DegenerateMoments";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::BadColumns: return "BadColumns";
    case ErrorCode::NoSolutionInBracket: return "NoSolutionInBracket";
    case ErrorCode::OutOfUnitInterval: return "OutOfUnitInterval";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::ExperimentFailed: return "ExperimentFailed";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace fmstat
