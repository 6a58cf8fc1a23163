#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dif {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Operand shapes are incompatible for the named operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Integration produced a non-finite or runaway state.
class IntegrationDiverged : public Error {
 public:
  IntegrationDiverged(std::size_t step, const std::string& what)
      : Error("integration diverged at step " + std::to_string(step) + ": " + what), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// The truth set of an NRMSE computation has zero spread.
class DegenerateTruth : public Error {
 public:
  using Error::Error;
};

/// A dataset, checkpoint or config file does not match its schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// A function vector does not match the derivative-network layout.
class LayoutMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace dif
