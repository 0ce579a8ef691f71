#pragma once

#include <stdexcept>
#include <string>

namespace srblab {

enum class ErrorCode {
  InvalidInput,
  OutOfBounds,
  BranchAmbiguity,
  SingularHeading,
  Infeasible,
  NonConvergence,
  Parse,
  Io,
  Numeric,
  State,
};

const char* to_string(ErrorCode code);

/// Base exception for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(ErrorCode::InvalidInput, message);
}

}  // namespace srblab
