#include "srblab/error.hpp"

namespace srblab {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput: return "invalid-input";
    case ErrorCode::OutOfBounds: return "out-of-bounds";
    case ErrorCode::BranchAmbiguity: return "branch-ambiguity";
    case ErrorCode::SingularHeading: return "singular-heading";
    case ErrorCode::Infeasible: return "infeasible";
    case ErrorCode::NonConvergence: return "non-convergence";
    case ErrorCode::Parse: return "parse-error";
    case ErrorCode::Io: return "io-error";
    case ErrorCode::Numeric: return "numeric-error";
    case ErrorCode::State: return "state-error";
  }
  return "unknown";
}

}  // namespace srblab
