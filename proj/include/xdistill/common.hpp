#pragma once

#include <stdexcept>
#include <string>

namespace xdistill {

// Usage/validation failure (bad shapes, bad config, bad arguments). CLI exit code 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failure (domain errors, non-finite losses, tolerance violations). CLI exit code 2.
struct NumericError : Error {
  using Error::Error;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

inline void check_numeric(bool cond, const std::string& msg) {
  if (!cond) throw NumericError(msg);
}

}  // namespace xdistill
