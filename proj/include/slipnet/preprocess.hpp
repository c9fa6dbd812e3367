#pragma once

#include "slipnet/events.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace slipnet {

constexpr std::uint16_t kCropSize = 400;
constexpr std::uint16_t kCropOffsetX = (kSensorWidth - kCropSize) / 2;  // 120
constexpr std::uint16_t kCropOffsetY = (kSensorHeight - kCropSize) / 2; // 40
constexpr std::uint16_t kPoolSize = 20;
constexpr std::uint16_t kGrid = kCropSize / kPoolSize; // 20

constexpr std::size_t kSteps = 30;
constexpr std::size_t kChannels = 1;
constexpr std::uint64_t kStepUs = 1000;
constexpr std::uint64_t kWindowUs = kSteps * kStepUs;
constexpr std::size_t kVolumeSize = kSteps * kChannels * kGrid * kGrid;

enum class SlipClass : std::uint8_t { NoSlip = 0, Incipient = 1, Gross = 2 };
std::string to_string(SlipClass c);

/// (30, 1, 20, 20) event counts for one 30 ms window starting at t_start_us.
struct SpikeVolume {
    std::vector<std::uint16_t> data = std::vector<std::uint16_t>(kVolumeSize, 0);
    std::uint64_t t_start_us = 0;

    static constexpr std::size_t index(std::size_t t, std::size_t c, std::size_t row, std::size_t col) {
        return ((t * kChannels + c) * kGrid + row) * kGrid + col;
    }
    std::uint16_t at(std::size_t t, std::size_t c, std::size_t row, std::size_t col) const {
        return data[index(t, c, row, col)];
    }
    std::uint64_t total() const;

    bool operator==(const SpikeVolume&) const = default;
};

/// Positive polarity, centered 400x400 crop, shifted to crop coordinates.
EventStream crop_and_filter(const EventStream& stream);

/// 20x20 pixel pooling; cell trains are merged in time order.
EventStream pool_events(const EventStream& stream);

/// crop_and_filter followed by pool_events.
EventStream to_grid(const EventStream& raw);

/// Counts events of a 20x20 stream in [t_start, t_start + 30 ms), 1 ms bins.
SpikeVolume bin_window(const EventStream& grid, std::uint64_t t_start_us);

/// Non-zero entries of a volume; the compact form used for datasets.
struct SparseVolume {
    struct Entry {
        std::uint16_t index; // SpikeVolume::index(t, 0, row, col)
        std::uint16_t count;
    };
    std::vector<Entry> entries; // ascending index
    std::uint64_t t_start_us = 0;

    static SparseVolume from_dense(const SpikeVolume& volume);
    SpikeVolume to_dense() const;
};

/// Sparse binning straight from a grid stream; equal to from_dense(bin_window(...)).
SparseVolume bin_window_sparse(const EventStream& grid, std::uint64_t t_start_us);

struct SampleWindow {
    std::uint64_t t_start_us = 0;
    SlipClass label = SlipClass::NoSlip;

    bool operator==(const SampleWindow&) const = default;
};

constexpr std::size_t kSamplesPerPhase = 50;

/// Window starts and labels for one trial, without building volumes.
/// NoSlip: up to 50 consecutive windows ending at the incipient onset.
/// Incipient: all aligned windows in [incipient, gross), or 50 of them drawn
/// without replacement when more fit. Gross: up to 50 consecutive windows
/// from the gross onset that end before the stream does.
std::vector<SampleWindow> sample_windows(const Trial& trial, std::uint64_t rng_seed);

struct LabeledSample {
    SpikeVolume volume;
    SlipClass label = SlipClass::NoSlip;
    std::string trial_id;
};

std::vector<LabeledSample> extract_samples(const Trial& trial, std::uint64_t rng_seed,
                                           const std::string& trial_id = {});

struct SplitRatios {
    double train = 0.70;
    double validation = 0.15;
    double test = 0.15;
};

/// Trial-level partition (indices into the input trial list).
struct TrialPartition {
    std::vector<std::size_t> train, validation, test;
};

/// Counts floor(r_train*n) / floor(r_val*n) / remainder after a seeded
/// shuffle. TooFewTrials when n < 3 or, with require_nonempty, any part is empty.
TrialPartition partition_trials(std::size_t n, const SplitRatios& ratios, std::uint64_t rng_seed,
                                bool require_nonempty = true);

struct DatasetSplit {
    std::vector<LabeledSample> train, validation, test;
    SplitRatios ratios;
};

DatasetSplit split_trials(const std::vector<Trial>& trials, const SplitRatios& ratios, std::uint64_t rng_seed,
                          bool require_nonempty = true);

// SpikeVolume file: "SPKV", u16 version, 4 x u16 dims (30, 1, 20, 20), then
// u16 counts in (t, c, row, col) row-major order. Little-endian.
constexpr std::uint16_t kVolumeFileVersion = 1;
constexpr std::size_t kVolumeHeaderBytes = 14;

std::vector<unsigned char> encode_volume(const SpikeVolume& volume);
/// Decodes one volume at `offset`; advances it past the record.
SpikeVolume decode_volume(const std::vector<unsigned char>& bytes, std::size_t& offset);
void save_volumes(const std::vector<SpikeVolume>& volumes, const std::filesystem::path& path);
std::vector<SpikeVolume> load_volumes(const std::filesystem::path& path);

} // namespace slipnet
