#pragma once

#include <stdexcept>
#include <string>

namespace carp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input file or text (carries file/line context in the message).
class ParseError : public Error {
public:
    using Error::Error;
    ParseError(const std::string& path, std::size_t line, const std::string& msg)
        : Error(path + ":" + std::to_string(line) + ": " + msg) {}
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A prompt cannot be made to fit the token budget.
class BudgetError : public Error {
public:
    using Error::Error;
};

/// Failure talking to a completion or embedding provider. Transient errors
/// (transport failures, rate limits) are eligible for retry; permanent ones
/// are not.
class ProviderError : public Error {
public:
    ProviderError(const std::string& msg, bool transient)
        : Error(msg), transient_(transient) {}
    bool transient() const { return transient_; }

private:
    bool transient_;
};

}  // namespace carp
