#pragma once

#include <stdexcept>
#include <string>

namespace icc {

// Bad inputs: malformed data, schema, spec or arguments.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An identifying assumption fails on the data or model at hand
// (relevance, completeness, common support, range conditions).
class IdentificationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Linear algebra or optimisation broke down.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace icc
