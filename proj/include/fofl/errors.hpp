#pragma once

#include <stdexcept>
#include <string>

namespace fofl {

/// Invalid or out-of-range configuration; detected before any compute.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing, malformed or inconsistent input data (CSV, manifest, datasets).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Correlation requested on a constant input.
class UndefinedCorrelation : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

} // namespace fofl
