#pragma once

#include <stdexcept>
#include <string>

namespace ctxducer {

// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A primitive produced NaN/Inf, or a numeric precondition failed.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed, truncated or version-mismatched file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration value or unknown key.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Input data violates an operation's precondition (too few points, bad label, ...).
class DataError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

} // namespace ctxducer
