#pragma once

#include <stdexcept>
#include <string>

namespace aspectcheck {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: bad files, invariant violations, bad arguments.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Model output without a usable rating.
class ParseError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// A lookup key that is absent (catalog entry, annotator, task).
class NotFoundError : public Error {
public:
    using Error::Error;
};

/// The LLM backend failed after its retry budget.
class BackendError : public Error {
public:
    using Error::Error;
};

/// Offline mode asked for a response the cache does not hold.
class CacheMissError : public BackendError {
public:
    using BackendError::BackendError;
};

}  // namespace aspectcheck
