#pragma once

#include "slipnet/scenario.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace slipnet {

constexpr std::uint16_t kSensorWidth = 640;
constexpr std::uint16_t kSensorHeight = 480;

/// One camera event. Timestamps are integer microseconds since trial start.
struct Event {
    std::uint64_t t_us = 0;
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::int8_t polarity = 1;

    bool operator==(const Event&) const = default;
};

struct EventStream {
    std::uint16_t width = kSensorWidth;
    std::uint16_t height = kSensorHeight;
    std::vector<Event> events; // non-decreasing t_us

    bool operator==(const EventStream&) const = default;
};

struct Trial {
    EventStream stream;
    std::optional<std::uint64_t> incipient_onset_us;
    std::optional<std::uint64_t> gross_onset_us;
    ScenarioConfig scenario;

    /// One past the last event timestamp; 0 for an empty stream.
    std::uint64_t end_us() const {
        return stream.events.empty() ? 0 : stream.events.back().t_us + 1;
    }
};

enum class ViolationKind { OutOfBounds, BadPolarity, Unsorted };

struct Violation {
    ViolationKind kind;
    std::size_t index; // first offending event

    bool operator==(const Violation&) const = default;
};

/// Empty iff every stream invariant holds. At most one entry per kind.
std::vector<Violation> validate_stream(const EventStream& stream);

// Event file: "NTEV", u16 version, u16 width, u16 height, u64 incipient,
// u64 gross, u64 count, then 16-byte records (u64 t, u16 x, u16 y, i8 p,
// 3 pad bytes). Little-endian; absent onsets are all-ones.
constexpr std::uint16_t kEventFileVersion = 1;
constexpr std::size_t kEventHeaderBytes = 34;
constexpr std::size_t kEventRecordBytes = 16;
constexpr std::uint64_t kAbsentOnset = ~std::uint64_t{0};

std::vector<unsigned char> encode_events(const Trial& trial);
Trial decode_events(const std::vector<unsigned char>& bytes);

void save_events(const Trial& trial, const std::filesystem::path& path);
/// The scenario record is not part of the event file; the returned trial
/// carries a default-constructed one.
Trial load_events(const std::filesystem::path& path);

} // namespace slipnet
