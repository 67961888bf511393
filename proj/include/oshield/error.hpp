#pragma once

#include <stdexcept>
#include <string>

namespace oshield {

/// Bad user input: malformed maps, out-of-range thresholds, unknown files.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// An internal invariant was broken (cyclic sub-MDP, queue not anchored, ...).
class InvariantViolation : public std::logic_error {
public:
    explicit InvariantViolation(const std::string& what) : std::logic_error(what) {}
};

/// Cooperative cancellation of a background computation.
class Cancelled : public std::runtime_error {
public:
    Cancelled() : std::runtime_error("computation cancelled") {}
};

}  // namespace oshield
