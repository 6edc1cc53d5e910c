#pragma once

#include <stdexcept>
#include <string>

namespace nst {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or lengths.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf encountered where a finite value is required.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Bad input data (unparseable cells, non-finite observations, short segments).
class DataError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Series whose regression design is singular (constant, exact ramp, ...).
class DegenerateSeriesError : public Error {
public:
    using Error::Error;
};

/// Inside a catch block: rethrows the active nst error as the same type with
/// `context: ` prepended to its message.
[[noreturn]] void rethrow_with_context(const std::string& context);

} // namespace nst
