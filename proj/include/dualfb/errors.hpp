#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dualfb {

/// Argument outside the mathematical domain of a closed-form evaluator.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Iterative method exhausted its budget.
class NoConvergence : public std::runtime_error {
public:
    NoConvergence(const std::string& what, std::size_t iterations)
        : std::runtime_error(what + " (after " + std::to_string(iterations) + " iterations)"),
          iterations_(iterations) {}

    std::size_t iterations() const noexcept { return iterations_; }

private:
    std::size_t iterations_;
};

class InvalidGrid : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Requested wealth lies outside the slope range the dual grid can represent.
class RangeError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

class InvalidParameters : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericalBlowup : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Configuration text could not be turned into a valid run.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace dualfb
