#pragma once

#include <stdexcept>
#include <string>

namespace qpiston {

// Bad configuration or call contract: invalid K, malformed config file,
// mismatched dimensions, unknown scenario name.
struct ConfigError : std::invalid_argument {
    explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Invalid physical state: non-positive length, broken normalization,
// positivity violation, non-Hermitian input where Hermitian is required.
struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

// Failure while integrating or replaying: wall crash (L <= 0), per-step
// norm/trace drift beyond tolerance, replay record too coarse.
struct IntegrationError : std::runtime_error {
    explicit IntegrationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / serialization failure.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace qpiston
