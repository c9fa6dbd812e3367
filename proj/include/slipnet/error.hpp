#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace slipnet {

enum class ErrorKind {
    MalformedHeader,
    VersionMismatch,
    UnsortedTimestamps,
    OutOfBounds,
    BadPolarity,
    OnsetOrder,
    IoFailure,
    WrongResolution,
    MissingOnsets,
    TooFewTrials,
    GeometryViolation,
    NoSlipOccurred,
    InvalidConfig,
    ShapeMismatch,
    NonFiniteInput,
    EmptySplit,
    DivergedLoss,
    EmptySequence,
    EmptyInput,
    PreprocessError,
    MissingTrials,
};

std::string_view to_string(ErrorKind kind);

/// Every recoverable failure in the toolkit. `index()` is set for record-level
/// errors (first offending event / record).
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message, std::optional<std::size_t> index = std::nullopt)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), index_(index) {}

    ErrorKind kind() const noexcept { return kind_; }
    std::optional<std::size_t> index() const noexcept { return index_; }

private:
    ErrorKind kind_;
    std::optional<std::size_t> index_;
};

} // namespace slipnet
