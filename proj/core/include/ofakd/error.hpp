#pragma once

#include <stdexcept>
#include <string>

namespace ofakd {

// Base of every error raised by the library. Callers that only need to
// distinguish "bad input" from "runtime failure" can use is_validation().
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual bool is_validation() const noexcept { return true; }
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

// Gradient tape misuse: non-scalar loss, stale or foreign tape.
class TapeError : public Error {
public:
    using Error::Error;
};

// A NaN or Inf escaped an operation. The message names the operation.
class NonFiniteError : public Error {
public:
    using Error::Error;
    bool is_validation() const noexcept override { return false; }
};

// Malformed or truncated binary file.
class FormatError : public Error {
public:
    using Error::Error;
    bool is_validation() const noexcept override { return false; }
};

class IoError : public Error {
public:
    using Error::Error;
    bool is_validation() const noexcept override { return false; }
};

// Constant features make CKA undefined.
class DegenerateFeaturesError : public Error {
public:
    using Error::Error;
};

[[noreturn]] void throw_io(const std::string& what, const std::string& path);

}  // namespace ofakd
