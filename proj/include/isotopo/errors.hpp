#pragma once

#include <stdexcept>
#include <string>

namespace isotopo {

// Error categories map onto CLI exit codes: ConfigError -> 1, everything
// numerical -> 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DomainError : Error {
  using Error::Error;
};

struct GeometryError : Error {
  using Error::Error;
};

struct RefinementError : Error {
  using Error::Error;
};

struct ModelError : Error {
  using Error::Error;
};

struct AssemblyError : Error {
  using Error::Error;
};

struct SolverError : Error {
  using Error::Error;
};

}  // namespace isotopo
