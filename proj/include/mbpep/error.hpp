#pragma once

#include <stdexcept>
#include <string>

namespace mbpep {

// Broad failure class; the CLI maps each kind to its own exit code.
enum class ErrorKind { Config, Data, Runtime };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class RuntimeFailure : public Error {
public:
    explicit RuntimeFailure(const std::string& what) : Error(ErrorKind::Runtime, what) {}
};

// A cell that could not be parsed as a number. Rows and columns are 1-based,
// with the header counted as row 1.
class CsvParseError : public DataError {
public:
    CsvParseError(const std::string& path, std::size_t row, std::size_t col, const std::string& detail)
        : DataError(path + ": row " + std::to_string(row) + ", col " + std::to_string(col) + ": " + detail),
          row_(row), col_(col) {}
    std::size_t row() const noexcept { return row_; }
    std::size_t col() const noexcept { return col_; }

private:
    std::size_t row_;
    std::size_t col_;
};

// Raised when a loss or gradient turns NaN/Inf during training.
class NonFiniteError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

} // namespace mbpep
