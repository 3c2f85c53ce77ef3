#pragma once

#include <stdexcept>
#include <string>

namespace dynbatch {

// Invalid configuration or argument outside a module's contract.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input file (trace, calibration CSV, config document).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A referenced file could not be opened.
class FileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// No batch size satisfies the requested constraint.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The simulation cannot continue (queue overflow, oversized request).
class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dynbatch
