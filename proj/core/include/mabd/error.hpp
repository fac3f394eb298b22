#pragma once

#include <stdexcept>
#include <string>

namespace mabd {

enum class ErrorCode {
    DegenerateMesh,
    NonSPD,
    NearSingular,
    StaleFactor,
    DegenerateCT,
    AntiParallelAxis,
    WrongBodies,
    NoLimitDefined,
    EmptyScene,
    SingularDiagonalBlock,
    SingularD,
    NotATree,
    SingularSchur,
    NotConverged,
    SingularKKT,
    OutOfDomain,
    ParseError,
    ValidationError,
    SolverFailure,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code), detail_(message) {}

    ErrorCode code() const noexcept { return code_; }
    // Message without the code prefix.
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

}  // namespace mabd
