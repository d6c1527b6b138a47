#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace prer {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or sizes.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Input outside an operation's mathematical domain (checked mode only).
class DomainError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf detected in a forward or backward buffer.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed configuration; `key_path` names the offending JSON key.
class ConfigError : public Error {
public:
    ConfigError(std::string key_path, const std::string& what)
        : Error(key_path.empty() ? what : key_path + ": " + what), key_path_(std::move(key_path)) {}
    const std::string& key_path() const noexcept { return key_path_; }

private:
    std::string key_path_;
};

/// Dataset or checkpoint I/O failure.
class DataError : public Error {
public:
    using Error::Error;
};

/// Binary payload does not follow its declared format; `offset` is the
/// byte position where parsing stopped.
class FormatError : public DataError {
public:
    FormatError(std::size_t offset, const std::string& what)
        : DataError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

}  // namespace prer
