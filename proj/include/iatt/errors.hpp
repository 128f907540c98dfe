#pragma once

#include <stdexcept>
#include <string>

namespace iatt {

// Caller broke a documented precondition (shape mismatch, wrong action count,
// unknown entity id, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid scenario, run configuration, or config file content.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Optimization produced non-finite values.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint could not be read back (checksum, version, variant tag, ...).
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace iatt
