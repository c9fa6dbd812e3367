#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace slipnet {

/// 64-bit FNV-1a over raw bytes. Used for seed derivation and content digests.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text, std::uint64_t basis = 0xcbf29ce484222325ULL);

std::uint64_t splitmix64(std::uint64_t x);

/// Per-stage seed: hash(stage name) mixed with the global seed and an index.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stage, std::uint64_t index);

/// Portable random source. The engine (mt19937_64) is fully specified by the
/// standard; the distributions here are too, unlike std::*_distribution,
/// so outputs are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);

    /// Exp(1) variate.
    double exponential();

    double normal();

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

} // namespace slipnet
