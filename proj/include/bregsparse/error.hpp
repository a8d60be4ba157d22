#pragma once

#include <stdexcept>
#include <string>

namespace bregsparse {

enum class ErrorCode {
    InvalidArgument,
    EmptyScope,
    ShapeMismatch,
    InvalidThreshold,
    InvalidPartition,
    NotASubgradient,
    NonConvergence,
    Diverged,
    ConfigError,
    IncompleteLog,
    Io,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::EmptyScope: return "EmptyScope";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::InvalidThreshold: return "InvalidThreshold";
        case ErrorCode::InvalidPartition: return "InvalidPartition";
        case ErrorCode::NotASubgradient: return "NotASubgradient";
        case ErrorCode::NonConvergence: return "NonConvergence";
        case ErrorCode::Diverged: return "Diverged";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::IncompleteLog: return "IncompleteLog";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

/// Library-wide exception; `code()` identifies the failure class.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) throw Error(code, what);
}

}  // namespace bregsparse
