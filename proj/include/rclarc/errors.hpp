#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rclarc {

enum class ErrorCode {
    DimensionMismatch,
    ZeroVector,
    NotSymmetric,
    SingularSystem,
    NonFiniteValue,
    NonFiniteLoss,
    InvalidArgument,
    DegenerateConcept,
    EmptyIntersection,
    ConceptUnknown,
    ConfigError,
    EmptyTestSet,
    ZeroRelevance,
    IoError,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace rclarc
