#pragma once

#include <stdexcept>
#include <string>

namespace forgetlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform to an op's shape rule.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A forward value or loss became NaN or infinite.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Invalid argument or violated precondition.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Malformed configuration, dataset or log file.
class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace forgetlab
