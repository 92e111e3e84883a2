#include "gudc/error.hpp"

namespace gudc {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonSymmetric: return "NonSymmetric";
    case ErrorCode::IndefiniteInput: return "IndefiniteInput";
    case ErrorCode::SingularReference: return "SingularReference";
    case ErrorCode::SingularSource: return "SingularSource";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::DomainViolation: return "DomainViolation";
    case ErrorCode::DomainBoundary: return "DomainBoundary";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::OuterBracketFailure: return "OuterBracketFailure";
    case ErrorCode::NonPSDMoments: return "NonPSDMoments";
    case ErrorCode::NotEnoughSamples: return "NotEnoughSamples";
    case ErrorCode::TightnessViolation: return "TightnessViolation";
    case ErrorCode::SinkhornDivergence: return "SinkhornDivergence";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace gudc
