#pragma once

#include <stdexcept>
#include <string>

namespace olva {

/// Shape or extent disagreement between operands. The message names the axis.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A documented precondition of an operation was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// log/exp or similar evaluated outside the representable domain.
class NumericDomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// File-system or format failure; the message carries the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A runtime invariant of the algorithm failed (e.g. a non-finite loss).
class InvariantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// User-supplied configuration could not be accepted.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace olva
