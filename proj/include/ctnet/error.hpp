#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ctnet {

/// Process exit codes used by the CLI.
enum class ExitCode : int {
    ok = 0,
    usage = 1,
    data = 2,
    numerical = 3,
};

class Error : public std::runtime_error {
public:
    Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

/// Bad configuration or arguments (wrong timeframe multiple, invalid periods, ...).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ExitCode::usage, what) {}
};

/// Input that violates a domain rule (bad bar, duplicate timestamp, missing price).
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ExitCode::data, what) {}
};

class ParseError : public DataError {
public:
    ParseError(std::size_t line, const std::string& what)
        : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ValidationError : public DataError {
public:
    using DataError::DataError;
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ExitCode::data, what) {}
};

/// A non-finite value showed up where the numerics require finite ones.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(ExitCode::numerical, what) {}
};

/// Not enough candidates to fill a basket.
class SelectionError : public DataError {
public:
    using DataError::DataError;
};

/// Caller broke a precondition (dimension mismatch, unequal lengths).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace ctnet
