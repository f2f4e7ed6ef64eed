#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace groundkit {

// Machine-readable error kinds shared across modules. The CLI maps these onto
// its exit-code contract and the annotation service onto HTTP statuses.
enum class ErrorCode {
    InvalidArgument,
    InvalidDimensions,
    InvalidGeometry,
    WrongDirection,
    LengthMismatch,
    ProbabilityOutOfRange,
    EmptyRun,
    DuplicateSample,
    MissingResult,
    TemplateError,
    EndpointUnavailable,
    RequestRejected,
    AssetError,
    ConfigError,
    ParseError,
    UnsupportedVersion,
    NotFound,
    EmptyExport,
    IoError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace groundkit
