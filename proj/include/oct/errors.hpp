#pragma once

#include <stdexcept>
#include <string>

namespace oct {

// Base for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/layer shape disagreement.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// API precondition violated (non-scalar backward, empty mask, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad data: ordering violations, infeasible specs, split problems,
// inputs exceeding configured sizes.
class DataError : public Error {
 public:
  using Error::Error;
};

// File system / codec failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Optimization went off the rails (sustained loss blow-up).
class TrainingError : public Error {
 public:
  using Error::Error;
};

inline void contract(bool ok, const std::string& msg) {
  if (!ok) throw ContractError(msg);
}

}  // namespace oct
