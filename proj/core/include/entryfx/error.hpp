#pragma once

#include <stdexcept>
#include <string>

namespace entryfx {

/// Broad failure classes; each maps to a CLI exit code.
enum class ErrorKind {
    validation,        // exit 2
    missing_artifact,  // exit 3
    numerical,         // exit 4
};

/// Base exception for every failure raised by the library.
///
/// `code()` is a short machine-readable tag ("invalid_range",
/// "degenerate_variance", ...) that tests and callers can match on without
/// parsing the message.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string code, const std::string& message);

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& code() const noexcept { return code_; }
    int exit_code() const noexcept;

private:
    ErrorKind kind_;
    std::string code_;
};

class ValidationError : public Error {
public:
    ValidationError(std::string code, const std::string& message)
        : Error(ErrorKind::validation, std::move(code), message) {}
};

class MissingArtifactError : public Error {
public:
    MissingArtifactError(std::string code, const std::string& message)
        : Error(ErrorKind::missing_artifact, std::move(code), message) {}
};

class NumericalError : public Error {
public:
    NumericalError(std::string code, const std::string& message)
        : Error(ErrorKind::numerical, std::move(code), message) {}
};

}  // namespace entryfx
