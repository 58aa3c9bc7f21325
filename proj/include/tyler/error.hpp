// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tyler {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad or missing input data. The CLI maps this family to exit code 2.
class DataError : public Error {
public:
    using Error::Error;
};

class NotFoundError : public DataError {
public:
    using DataError::DataError;
};

class ParseError : public DataError {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& what)
        : DataError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class FormatError : public DataError {
public:
    using DataError::DataError;
};

/// Unknown entity/node passed to a graph query.
class LookupError : public DataError {
public:
    using DataError::DataError;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// NaN/inf in a forward trace, gradient or score. Exit code 3.
class NumericError : public Error {
public:
    using Error::Error;
};

class SamplingExhaustedError : public Error {
public:
    using Error::Error;
};

}  // namespace tyler
