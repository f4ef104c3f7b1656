#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace madeval {

enum class Errc {
    UnreadableFile,
    UnsupportedFormat,
    DimensionMismatch,
    ImageTooSmall,
    DescriptorMismatch,
    MissingCandidate,
    LengthMismatch,
    ValidationError,
    PoolExhausted,
    IncompleteSelections,
    UnknownSubject,
    UnknownTrial,
    DuplicateVote,
    InvalidChoice,
    CorruptLog,
    DisconnectedComparisonGraph,
    DegenerateInput,
    MissingOutputs,
    EmptyPool,
    PhaseError,
    ConfigError,
};

std::string_view errc_name(Errc code) noexcept;

// All library failures surface as this exception; `code()` identifies the
// failure class so callers (CLI, HTTP layer, tests) can branch on it.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace madeval
