#pragma once

#include <stdexcept>
#include <string>

namespace lfgp {

enum class ErrorCode {
    NotPositiveDefinite,
    NotSymmetric,
    BadLength,
    DimMismatch,
    WindowTooLong,
    GridNotSorted,
    NonPositiveTheta,
    NumericalBreakdown,
    SingularDesign,
    EmptyChain,
    KTooLarge,
    DegenerateState,
    MissingLabel,
    TooFewDraws,
    EmptyTrain,
    NoConvergence,
    NoSecondClass,
    RaggedTrials,
    ParseError,
    VersionMismatch,
    HashMismatch,
    ConfigError,
    InvalidArgument,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::NotSymmetric: return "NotSymmetric";
    case ErrorCode::BadLength: return "BadLength";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::WindowTooLong: return "WindowTooLong";
    case ErrorCode::GridNotSorted: return "GridNotSorted";
    case ErrorCode::NonPositiveTheta: return "NonPositiveTheta";
    case ErrorCode::NumericalBreakdown: return "NumericalBreakdown";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::EmptyChain: return "EmptyChain";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::DegenerateState: return "DegenerateState";
    case ErrorCode::MissingLabel: return "MissingLabel";
    case ErrorCode::TooFewDraws: return "TooFewDraws";
    case ErrorCode::EmptyTrain: return "EmptyTrain";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::NoSecondClass: return "NoSecondClass";
    case ErrorCode::RaggedTrials: return "RaggedTrials";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::HashMismatch: return "HashMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

/// Exit status groups used by the command line tool.
enum class ErrorCategory { Config = 2, Data = 3, Numerical = 4 };

inline ErrorCategory category_of(ErrorCode code) {
    switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument:
    case ErrorCode::KTooLarge:
    case ErrorCode::WindowTooLong:
        return ErrorCategory::Config;
    case ErrorCode::RaggedTrials:
    case ErrorCode::ParseError:
    case ErrorCode::VersionMismatch:
    case ErrorCode::HashMismatch:
    case ErrorCode::MissingLabel:
    case ErrorCode::BadLength:
    case ErrorCode::DimMismatch:
    case ErrorCode::TooFewDraws:
    case ErrorCode::EmptyTrain:
    case ErrorCode::NoSecondClass:
    case ErrorCode::EmptyChain:
    case ErrorCode::GridNotSorted:
        return ErrorCategory::Data;
    default:
        return ErrorCategory::Numerical;
    }
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace lfgp
