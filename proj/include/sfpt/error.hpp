#pragma once

#include <stdexcept>
#include <string>

namespace sfpt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text (OBJ, skinning, transform, config, checkpoint files).
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    explicit ParseError(const std::string& what) : Error(what), line_(0) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Operand sizes or shapes do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A value violates a documented precondition (bounds, emptiness, ...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A numerical check failed or a computation produced non-finite values.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// File system failure.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace sfpt
