#pragma once

// Error taxonomy shared by every module. One exception type carries a code so
// callers can branch on the failure kind and the CLI can map it to an exit
// status.

#include <stdexcept>
#include <string>
#include <string_view>

namespace crisp {

enum class ErrorCode {
    // trace-core
    MissingThinkClose,
    MultipleThinkClose,
    EmptyChain,
    NoBoxedAnswer,
    SchemaViolation,
    // saliency
    SpanOutOfRange,
    LayoutMismatch,
    EmptyScores,
    // oracle gateway
    BackendUnavailable,
    ContextTooLong,
    EditRefused,
    RefineRejected,
    MissingCapability,
    // compressor / corpus / anchor-lab
    ReplayError,
    TargetTooLong,
    KTooLarge,
    InvalidArgument,
    // cli
    ConfigError,
};

enum class ErrorCategory { Config, Data, Backend };

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::MissingThinkClose: return "MissingThinkClose";
        case ErrorCode::MultipleThinkClose: return "MultipleThinkClose";
        case ErrorCode::EmptyChain: return "EmptyChain";
        case ErrorCode::NoBoxedAnswer: return "NoBoxedAnswer";
        case ErrorCode::SchemaViolation: return "SchemaViolation";
        case ErrorCode::SpanOutOfRange: return "SpanOutOfRange";
        case ErrorCode::LayoutMismatch: return "LayoutMismatch";
        case ErrorCode::EmptyScores: return "EmptyScores";
        case ErrorCode::BackendUnavailable: return "BackendUnavailable";
        case ErrorCode::ContextTooLong: return "ContextTooLong";
        case ErrorCode::EditRefused: return "EditRefused";
        case ErrorCode::RefineRejected: return "RefineRejected";
        case ErrorCode::MissingCapability: return "MissingCapability";
        case ErrorCode::ReplayError: return "ReplayError";
        case ErrorCode::TargetTooLong: return "TargetTooLong";
        case ErrorCode::KTooLarge: return "KTooLarge";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

inline ErrorCategory category_of(ErrorCode code) {
    switch (code) {
        case ErrorCode::ConfigError:
            return ErrorCategory::Config;
        case ErrorCode::BackendUnavailable:
        case ErrorCode::ContextTooLong:
        case ErrorCode::EditRefused:
        case ErrorCode::RefineRejected:
        case ErrorCode::MissingCapability:
            return ErrorCategory::Backend;
        default:
            return ErrorCategory::Data;
    }
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }
    ErrorCategory category() const noexcept { return category_of(code_); }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace crisp
