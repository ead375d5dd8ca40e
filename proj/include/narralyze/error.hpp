#pragma once

#include <stdexcept>
#include <string>

namespace narralyze {

/// Base of every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid input data or configuration (exit code 1).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A mathematical precondition was violated (zero norm, raw > max, ...).
class DomainError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Input too small to produce a defined result (no tokens, no sentences).
class DegenerateInputError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Remote service failure (exit code 2).
class ProviderError : public Error {
public:
    using Error::Error;
};

class AuthError : public ProviderError {
public:
    using ProviderError::ProviderError;
};

class RetriesExhaustedError : public ProviderError {
public:
    using ProviderError::ProviderError;
};

class OfflineCacheMissError : public ProviderError {
public:
    using ProviderError::ProviderError;
};

/// The remote answered, but not in the shape the wire protocol promises.
class ProtocolError : public ProviderError {
public:
    using ProviderError::ProviderError;
};

} // namespace narralyze

#include <vector>

namespace narralyze {

/// Non-fatal diagnostics collected by loaders (duplicate entries, empty files, ...).
using Warnings = std::vector<std::string>;

inline void warn(Warnings* sink, std::string message) {
    if (sink) sink->push_back(std::move(message));
}

} // namespace narralyze
