#pragma once

#include <stdexcept>
#include <string>

namespace ldn {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (bad exponent, label out of range, ...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

/// A file was readable but its contents violate the expected format.
class FormatError : public Error {
public:
    using Error::Error;
};

/// A NaN or infinity showed up where a finite number is required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// A configuration file or override is malformed (unknown key, duplicate, bad value).
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace ldn
