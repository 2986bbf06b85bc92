#pragma once

#include <stdexcept>
#include <string>

namespace heatshape {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Degenerate or invalid curve data.
struct GeometryError : Error {
  using Error::Error;
};

// Argument outside the domain of a kernel/special function.
struct DomainError : Error {
  using Error::Error;
};

// Off-boundary target closer to a curve than the configured clearance.
struct ClearanceError : Error {
  using Error::Error;
};

// Singular/ill-conditioned system or other numerical breakdown.
struct SolverError : Error {
  using Error::Error;
};

// Scenario parse/validation failure; `path` names the offending field.
struct ValidationError : Error {
  ValidationError(std::string field, const std::string& what)
      : Error(field + ": " + what), path(std::move(field)) {}
  std::string path;
};

}  // namespace heatshape
