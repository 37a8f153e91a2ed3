#include "nrsa/error.hpp"

namespace nrsa {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::MalformedCsv: return "MalformedCsv";
        case ErrorCode::DuplicateName: return "DuplicateName";
        case ErrorCode::EmptyTable: return "EmptyTable";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::TruncatedFile: return "TruncatedFile";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::IoFailure: return "IoFailure";
        case ErrorCode::UnknownConcept: return "UnknownConcept";
        case ErrorCode::OutOfRangeScore: return "OutOfRangeScore";
        case ErrorCode::PairFullyMissing: return "PairFullyMissing";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::SequenceTooLong: return "SequenceTooLong";
        case ErrorCode::UnknownToken: return "UnknownToken";
        case ErrorCode::EmptyDataset: return "EmptyDataset";
        case ErrorCode::DivergenceDetected: return "DivergenceDetected";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::UnknownAttribute: return "UnknownAttribute";
        case ErrorCode::ConceptMismatch: return "ConceptMismatch";
        case ErrorCode::NTooLarge: return "NTooLarge";
        case ErrorCode::TooFewParticipants: return "TooFewParticipants";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::DegenerateInput: return "DegenerateInput";
        case ErrorCode::DegenerateAgreement: return "DegenerateAgreement";
        case ErrorCode::BoundaryR: return "BoundaryR";
        case ErrorCode::InvalidP: return "InvalidP";
        case ErrorCode::ZeroVariance: return "ZeroVariance";
        case ErrorCode::TooFewNonzero: return "TooFewNonzero";
        case ErrorCode::TooFewPoints: return "TooFewPoints";
        case ErrorCode::MissingCell: return "MissingCell";
        case ErrorCode::DegenerateVariance: return "DegenerateVariance";
        case ErrorCode::RankDeficient: return "RankDeficient";
        case ErrorCode::NoConvergence: return "NoConvergence";
        case ErrorCode::InvalidSpec: return "InvalidSpec";
        case ErrorCode::IncompleteGrid: return "IncompleteGrid";
        case ErrorCode::TooFewTasks: return "TooFewTasks";
    }
    return "Unknown";
}

}  // namespace nrsa
