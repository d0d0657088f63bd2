#pragma once

#include <stdexcept>
#include <string>

namespace pdisent {

/// A run configuration violates a contract of the pipeline (e.g. training
/// stage 3 with an unfrozen backbone, or a required checkpoint is missing).
class ConfigurationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pdisent
