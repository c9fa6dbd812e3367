#include "slipnet/rng.hpp"

#include "slipnet/error.hpp"

#include <cmath>
#include <numbers>

namespace slipnet {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::MalformedHeader: return "MalformedHeader";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::UnsortedTimestamps: return "UnsortedTimestamps";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::BadPolarity: return "BadPolarity";
    case ErrorKind::OnsetOrder: return "OnsetOrder";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::WrongResolution: return "WrongResolution";
    case ErrorKind::MissingOnsets: return "MissingOnsets";
    case ErrorKind::TooFewTrials: return "TooFewTrials";
    case ErrorKind::GeometryViolation: return "GeometryViolation";
    case ErrorKind::NoSlipOccurred: return "NoSlipOccurred";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::EmptySplit: return "EmptySplit";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::EmptySequence: return "EmptySequence";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::PreprocessError: return "PreprocessError";
    case ErrorKind::MissingTrials: return "MissingTrials";
    }
    return "Unknown";
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(std::string_view text, std::uint64_t basis) {
    return fnv1a64(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()), basis);
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stage, std::uint64_t index) {
    return splitmix64(splitmix64(global_seed ^ fnv1a64(stage)) + splitmix64(index));
}

std::uint64_t Rng::below(std::uint64_t n) {
    // Rejection sampling on the top of the range keeps the result unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::exponential() {
    return -std::log1p(-uniform());
}

double Rng::normal() {
    // Box-Muller, one variate per call.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace slipnet
