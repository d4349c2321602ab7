#pragma once

#include <stdexcept>
#include <string>

namespace psdbp {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid offspring specification (parameters violate the standing assumptions).
struct SpecError : Error {
  using Error::Error;
};

// Malformed configuration input (JSON schema, CLI arguments, file formats).
struct ConfigError : Error {
  using Error::Error;
};

// Numeric failure: non-convergence, overflow, infeasible tolerance.
struct NumericError : Error {
  using Error::Error;
};

// An estimator is undefined on the given data (e.g. no visits to the target
// state, zero denominator). Distinct from NumericError so callers can tell
// "not enough data" apart from "computation broke".
struct UndefinedEstimatorError : Error {
  using Error::Error;
};

}  // namespace psdbp
