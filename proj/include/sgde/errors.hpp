#pragma once

#include <stdexcept>
#include <string>

namespace sgde {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration (bad architecture, bad scenario config, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Tensor / batch dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Noise calibration could not reach the requested budget.
class CalibrationError : public Error {
 public:
  using Error::Error;
};

// Broken or insufficient input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Schema definition or schema/data mismatch.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Invalid federation plan (weights, client sets).
class PlanError : public Error {
 public:
  using Error::Error;
};

// Policy violation (privacy gate, delta rule, architecture constraints).
class PolicyError : public Error {
 public:
  using Error::Error;
};

// Checksum or format failure on an artifact.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Caller is not authorized for the requested operation.
class AuthError : public Error {
 public:
  using Error::Error;
};

// Requested entity does not exist.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Malformed request (empty ids, bad bodies).
class RequestError : public Error {
 public:
  using Error::Error;
};

// Server state could not be restored.
class StartupError : public Error {
 public:
  using Error::Error;
};

}  // namespace sgde
