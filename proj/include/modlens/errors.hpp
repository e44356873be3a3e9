#pragma once

#include <stdexcept>
#include <string>

namespace modlens {

// Invalid configuration or user input. Maps to CLI exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Runtime failure: I/O, shape mismatch, divergence. Maps to CLI exit code 3.
struct RuntimeFailure : std::runtime_error {
  explicit RuntimeFailure(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace modlens
