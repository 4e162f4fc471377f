#pragma once

#include <stdexcept>
#include <string>

namespace levsq {

// Precondition on a physical quantity violated (non-positive frequency, non-symplectic map...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Input outside the set of states a model is derived for.
class UnsupportedInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Inconsistent or malformed configuration. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numerical failure (fit divergence, degenerate estimator input). Maps to CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace levsq
