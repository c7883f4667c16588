#pragma once

#include <stdexcept>
#include <string>

namespace pamdn {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor shapes or axes that do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Parameters that cannot describe a valid layer, model or run.
class ConfigError : public Error {
public:
    using Error::Error;
};

// An operation invoked in a state that cannot support it.
class StateError : public Error {
public:
    using Error::Error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

class RangeError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace pamdn
