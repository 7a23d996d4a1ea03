#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace conspace {

// Base class for every toolkit error.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A precondition on caller-supplied data was violated.
class InvalidInputError : public Error {
public:
    using Error::Error;
};

// Lookup of a key (cell id, cluster id, label) that is not registered.
class MissingKeyError : public Error {
public:
    using Error::Error;
};

// Malformed input file. Carries file, 1-based line and column of the offence.
class SchemaError : public Error {
public:
    SchemaError(std::string file, std::size_t line, std::size_t column,
                const std::string& detail)
        : Error(file + ":" + std::to_string(line) + ":" + std::to_string(column)
                + ": " + detail),
          file_(std::move(file)), line_(line), column_(column) {}

    const std::string& file() const { return file_; }
    std::size_t line() const { return line_; }
    std::size_t column() const { return column_; }

private:
    std::string file_;
    std::size_t line_;
    std::size_t column_;
};

// Iterative procedure failed to reach its tolerance.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& msg, double last_delta)
        : Error(msg), last_delta_(last_delta) {}

    double last_delta() const { return last_delta_; }

private:
    double last_delta_;
};

// Design matrix has linearly dependent columns.
class RankDeficiencyError : public Error {
public:
    using Error::Error;
};

// A variable to standardize has zero variance in the estimation sample.
class DegenerateSampleError : public Error {
public:
    using Error::Error;
};

// Invalid configuration value. Message names the parameter and valid range.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace conspace
