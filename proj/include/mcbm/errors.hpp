#pragma once

#include <stdexcept>
#include <string>

namespace mcbm {

// Base of every error thrown by the library. The CLI maps subclasses onto
// process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

// NaN/Inf detected in a loss or tensor.
class NumericError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class LoadError : public IoError {
public:
    using IoError::IoError;
};

// A metric whose definition breaks down on the given input (zero entropy,
// zero denominator, ...).
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

}  // namespace mcbm
