#ifndef TRIGGERS_ERRORS_HPP
#define TRIGGERS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace triggers {

/// Malformed inputs: bad files, unknown ids, schema violations. CLI exit code 2.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numeric failures: divergence, NaN losses. CLI exit code 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace triggers

#endif
