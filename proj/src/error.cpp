#include "madeval/error.hpp"

namespace madeval {

std::string_view errc_name(Errc code) noexcept {
    switch (code) {
        case Errc::UnreadableFile: return "UnreadableFile";
        case Errc::UnsupportedFormat: return "UnsupportedFormat";
        case Errc::DimensionMismatch: return "DimensionMismatch";
        case Errc::ImageTooSmall: return "ImageTooSmall";
        case Errc::DescriptorMismatch: return "DescriptorMismatch";
        case Errc::MissingCandidate: return "MissingCandidate";
        case Errc::LengthMismatch: return "LengthMismatch";
        case Errc::ValidationError: return "ValidationError";
        case Errc::PoolExhausted: return "PoolExhausted";
        case Errc::IncompleteSelections: return "IncompleteSelections";
        case Errc::UnknownSubject: return "UnknownSubject";
        case Errc::UnknownTrial: return "UnknownTrial";
        case Errc::DuplicateVote: return "DuplicateVote";
        case Errc::InvalidChoice: return "InvalidChoice";
        case Errc::CorruptLog: return "CorruptLog";
        case Errc::DisconnectedComparisonGraph: return "DisconnectedComparisonGraph";
        case Errc::DegenerateInput: return "DegenerateInput";
        case Errc::MissingOutputs: return "MissingOutputs";
        case Errc::EmptyPool: return "EmptyPool";
        case Errc::PhaseError: return "PhaseError";
        case Errc::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

}  // namespace madeval
