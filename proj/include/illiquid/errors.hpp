#pragma once

#include <stdexcept>
#include <string>

namespace illiquid {

/// Invalid latent distribution or matrix dimensions (e.g. covariance not PSD).
class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller passed an argument outside an operation's domain.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Mean dynamics with spectral radius >= 1 have no steady state.
class NonConvergentSystemError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A program builder was asked for a nonconvex instance.
class NonconvexityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input data table does not have the expected columns.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Configuration file could not be parsed or validated.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& what, int line = 0)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}

    int line() const noexcept { return line_; }

private:
    int line_;
};

}  // namespace illiquid
