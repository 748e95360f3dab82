#pragma once

#include <stdexcept>
#include <string>

namespace gaussedit {

enum class ErrorKind {
    InvalidParameter,
    Format,
    Validation,
    Argument,
    Precondition,
    Transport,
    Protocol,
    Model,
    Degeneracy,
    Propagation,
    ContractViolation,
};

// Exit codes of the command-line surface.
enum class ExitCode : int { Ok = 0, Validation = 2, Service = 3, Numerical = 4 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    bool retryable() const noexcept { return kind_ == ErrorKind::Transport; }

    ExitCode exit_code() const noexcept {
        switch (kind_) {
        case ErrorKind::Transport:
        case ErrorKind::Protocol:
        case ErrorKind::Model:
            return ExitCode::Service;
        case ErrorKind::Degeneracy:
        case ErrorKind::Propagation:
            return ExitCode::Numerical;
        default:
            return ExitCode::Validation;
        }
    }

private:
    ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidParameter: return "invalid-parameter";
    case ErrorKind::Format: return "format";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Argument: return "argument";
    case ErrorKind::Precondition: return "precondition";
    case ErrorKind::Transport: return "transport";
    case ErrorKind::Protocol: return "protocol";
    case ErrorKind::Model: return "model";
    case ErrorKind::Degeneracy: return "degeneracy";
    case ErrorKind::Propagation: return "propagation";
    case ErrorKind::ContractViolation: return "contract-violation";
    }
    return "unknown";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool condition, ErrorKind kind, const std::string& what) {
    if (!condition) fail(kind, what);
}

} // namespace gaussedit
