#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nrsa {

enum class ErrorCode {
    // dataio
    MalformedCsv,
    DuplicateName,
    EmptyTable,
    BadMagic,
    TruncatedFile,
    NonFiniteValue,
    IoFailure,
    UnknownConcept,
    OutOfRangeScore,
    PairFullyMissing,
    // toylm
    InvalidConfig,
    SequenceTooLong,
    UnknownToken,
    EmptyDataset,
    DivergenceDetected,
    // rdm / rsa
    IndexOutOfRange,
    UnknownAttribute,
    ConceptMismatch,
    NTooLarge,
    TooFewParticipants,
    // stats
    LengthMismatch,
    DegenerateInput,
    DegenerateAgreement,
    BoundaryR,
    InvalidP,
    ZeroVariance,
    TooFewNonzero,
    TooFewPoints,
    MissingCell,
    DegenerateVariance,
    RankDeficient,
    NoConvergence,
    // experiment
    InvalidSpec,
    IncompleteGrid,
    TooFewTasks,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Domain error carrying a machine-checkable code. The CLI maps these to exit status 1.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace nrsa
