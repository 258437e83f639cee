#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tagknn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input data: malformed records, duplicate ids, out-of-range values.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A malformed line in a text input; carries the 1-based line number.
class ParseError : public ValidationError {
public:
    ParseError(std::size_t line, const std::string& what)
        : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class DimensionMismatch : public Error {
public:
    DimensionMismatch(std::size_t expected, std::size_t actual)
        : Error("dimension mismatch: expected " + std::to_string(expected) + ", got " +
                std::to_string(actual)),
          expected_(expected), actual_(actual) {}

    std::size_t expected() const noexcept { return expected_; }
    std::size_t actual() const noexcept { return actual_; }

private:
    std::size_t expected_;
    std::size_t actual_;
};

/// An index or search result was used against a datastore generation it was not built for.
class StaleIndexError : public Error {
public:
    using Error::Error;
};

/// Unreadable, truncated or corrupt files.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace tagknn
