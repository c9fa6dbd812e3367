#include "slipnet/preprocess.hpp"

#include "slipnet/binary_io.hpp"
#include "slipnet/error.hpp"
#include "slipnet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace slipnet {

std::string to_string(SlipClass c) {
    switch (c) {
    case SlipClass::NoSlip: return "NoSlip";
    case SlipClass::Incipient: return "Incipient";
    case SlipClass::Gross: return "Gross";
    }
    return "?";
}

std::uint64_t SpikeVolume::total() const {
    return std::accumulate(data.begin(), data.end(), std::uint64_t{0});
}

EventStream crop_and_filter(const EventStream& stream) {
    if (stream.width != kSensorWidth || stream.height != kSensorHeight) {
        throw Error(ErrorKind::WrongResolution, "expected 640x480 stream, got " + std::to_string(stream.width) +
                                                    "x" + std::to_string(stream.height));
    }
    EventStream out;
    out.width = kCropSize;
    out.height = kCropSize;
    for (const Event& e : stream.events) {
        if (e.polarity != 1) continue;
        if (e.x < kCropOffsetX || e.x >= kCropOffsetX + kCropSize) continue;
        if (e.y < kCropOffsetY || e.y >= kCropOffsetY + kCropSize) continue;
        out.events.push_back({e.t_us, static_cast<std::uint16_t>(e.x - kCropOffsetX),
                              static_cast<std::uint16_t>(e.y - kCropOffsetY), e.polarity});
    }
    return out;
}

EventStream pool_events(const EventStream& stream) {
    if (stream.width != kCropSize || stream.height != kCropSize) {
        throw Error(ErrorKind::WrongResolution, "expected 400x400 stream, got " + std::to_string(stream.width) +
                                                    "x" + std::to_string(stream.height));
    }
    EventStream out;
    out.width = kGrid;
    out.height = kGrid;
    out.events.reserve(stream.events.size());
    for (const Event& e : stream.events) {
        out.events.push_back({e.t_us, static_cast<std::uint16_t>(e.x / kPoolSize),
                              static_cast<std::uint16_t>(e.y / kPoolSize), e.polarity});
    }
    // Already time-ordered when the input is; the stable sort only matters for
    // hand-built unsorted inputs and keeps ties in input order.
    std::stable_sort(out.events.begin(), out.events.end(),
                     [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
    return out;
}

EventStream to_grid(const EventStream& raw) {
    return pool_events(crop_and_filter(raw));
}

namespace {

template <typename Visit>
void for_window_events(const EventStream& grid, std::uint64_t t_start_us, Visit&& visit) {
    const auto& ev = grid.events;
    auto it = std::lower_bound(ev.begin(), ev.end(), t_start_us,
                               [](const Event& e, std::uint64_t t) { return e.t_us < t; });
    const std::uint64_t t_end = t_start_us + kWindowUs;
    for (; it != ev.end() && it->t_us < t_end; ++it) {
        if (it->x >= kGrid || it->y >= kGrid) {
            throw Error(ErrorKind::PreprocessError, "event outside the 20x20 grid");
        }
        const std::size_t step = static_cast<std::size_t>((it->t_us - t_start_us) / kStepUs);
        visit(SpikeVolume::index(step, 0, it->y, it->x));
    }
}

} // namespace

SpikeVolume bin_window(const EventStream& grid, std::uint64_t t_start_us) {
    SpikeVolume vol;
    vol.t_start_us = t_start_us;
    for_window_events(grid, t_start_us, [&](std::size_t idx) {
        if (vol.data[idx] == std::numeric_limits<std::uint16_t>::max()) {
            throw Error(ErrorKind::PreprocessError, "bin count overflow");
        }
        ++vol.data[idx];
    });
    return vol;
}

SparseVolume SparseVolume::from_dense(const SpikeVolume& volume) {
    SparseVolume out;
    out.t_start_us = volume.t_start_us;
    for (std::size_t i = 0; i < volume.data.size(); ++i) {
        if (volume.data[i] != 0) out.entries.push_back({static_cast<std::uint16_t>(i), volume.data[i]});
    }
    return out;
}

SpikeVolume SparseVolume::to_dense() const {
    SpikeVolume out;
    out.t_start_us = t_start_us;
    for (const Entry& e : entries) out.data[e.index] = e.count;
    return out;
}

SparseVolume bin_window_sparse(const EventStream& grid, std::uint64_t t_start_us) {
    std::vector<std::uint16_t> idx;
    for_window_events(grid, t_start_us, [&](std::size_t i) { idx.push_back(static_cast<std::uint16_t>(i)); });
    std::sort(idx.begin(), idx.end());
    SparseVolume out;
    out.t_start_us = t_start_us;
    for (std::uint16_t i : idx) {
        if (!out.entries.empty() && out.entries.back().index == i) {
            ++out.entries.back().count;
        } else {
            out.entries.push_back({i, 1});
        }
    }
    return out;
}

std::vector<SampleWindow> sample_windows(const Trial& trial, std::uint64_t rng_seed) {
    if (!trial.incipient_onset_us || !trial.gross_onset_us) {
        throw Error(ErrorKind::MissingOnsets, "sample extraction needs both onsets");
    }
    const std::uint64_t inc = *trial.incipient_onset_us;
    const std::uint64_t gross = *trial.gross_onset_us;
    std::vector<SampleWindow> out;

    const std::uint64_t n_noslip = std::min<std::uint64_t>(kSamplesPerPhase, inc / kWindowUs);
    for (std::uint64_t k = n_noslip; k >= 1; --k) {
        out.push_back({inc - k * kWindowUs, SlipClass::NoSlip});
    }

    const std::uint64_t slots = (gross - inc) / kWindowUs;
    if (slots > kSamplesPerPhase) {
        std::vector<std::uint64_t> pick(slots);
        std::iota(pick.begin(), pick.end(), std::uint64_t{0});
        Rng rng(rng_seed);
        // Partial Fisher-Yates: the first 50 positions are a uniform draw without replacement.
        for (std::size_t i = 0; i < kSamplesPerPhase; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(slots - i));
            std::swap(pick[i], pick[j]);
        }
        pick.resize(kSamplesPerPhase);
        std::sort(pick.begin(), pick.end());
        for (std::uint64_t s : pick) out.push_back({inc + s * kWindowUs, SlipClass::Incipient});
    } else {
        for (std::uint64_t s = 0; s < slots; ++s) out.push_back({inc + s * kWindowUs, SlipClass::Incipient});
    }

    const std::uint64_t end = trial.end_us();
    const std::uint64_t avail = end > gross ? (end - gross) / kWindowUs : 0;
    const std::uint64_t n_gross = std::min<std::uint64_t>(kSamplesPerPhase, avail);
    for (std::uint64_t k = 0; k < n_gross; ++k) out.push_back({gross + k * kWindowUs, SlipClass::Gross});
    return out;
}

std::vector<LabeledSample> extract_samples(const Trial& trial, std::uint64_t rng_seed, const std::string& trial_id) {
    const auto windows = sample_windows(trial, rng_seed);
    const EventStream grid = to_grid(trial.stream);
    std::vector<LabeledSample> out;
    out.reserve(windows.size());
    for (const SampleWindow& w : windows) {
        out.push_back({bin_window(grid, w.t_start_us), w.label, trial_id});
    }
    return out;
}

TrialPartition partition_trials(std::size_t n, const SplitRatios& ratios, std::uint64_t rng_seed,
                                bool require_nonempty) {
    if (n < 3) throw Error(ErrorKind::TooFewTrials, "need at least 3 trials, got " + std::to_string(n));
    if (!(ratios.train >= 0 && ratios.validation >= 0 && ratios.test >= 0) ||
        ratios.train + ratios.validation > 1.0 + 1e-12) {
        throw Error(ErrorKind::InvalidConfig, "split ratios must be non-negative and sum to 1");
    }
    // The epsilon absorbs representation error (0.7 * 10 must give 7).
    const auto n_train = static_cast<std::size_t>(std::floor(ratios.train * static_cast<double>(n) + 1e-9));
    const auto n_val = static_cast<std::size_t>(std::floor(ratios.validation * static_cast<double>(n) + 1e-9));
    const std::size_t n_test = n - n_train - n_val;
    if (require_nonempty && (n_train == 0 || n_val == 0 || n_test == 0)) {
        throw Error(ErrorKind::TooFewTrials, "split " + std::to_string(n_train) + "/" + std::to_string(n_val) + "/" +
                                                 std::to_string(n_test) + " leaves an empty part");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(rng_seed);
    rng.shuffle(std::span(order));

    TrialPartition p;
    p.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    p.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                        order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    p.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    for (auto* part : {&p.train, &p.validation, &p.test}) std::sort(part->begin(), part->end());
    return p;
}

DatasetSplit split_trials(const std::vector<Trial>& trials, const SplitRatios& ratios, std::uint64_t rng_seed,
                          bool require_nonempty) {
    const TrialPartition p = partition_trials(trials.size(), ratios, rng_seed, require_nonempty);
    DatasetSplit out;
    out.ratios = ratios;
    auto fill = [&](const std::vector<std::size_t>& idx, std::vector<LabeledSample>& dst) {
        for (std::size_t i : idx) {
            auto samples = extract_samples(trials[i], derive_seed(rng_seed, "extract", i), std::to_string(i));
            std::move(samples.begin(), samples.end(), std::back_inserter(dst));
        }
    };
    fill(p.train, out.train);
    fill(p.validation, out.validation);
    fill(p.test, out.test);
    return out;
}

std::vector<unsigned char> encode_volume(const SpikeVolume& volume) {
    io::ByteWriter w;
    w.bytes("SPKV");
    w.put<std::uint16_t>(kVolumeFileVersion);
    for (std::size_t d : {kSteps, kChannels, std::size_t{kGrid}, std::size_t{kGrid}}) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(d));
    }
    for (std::uint16_t v : volume.data) w.put<std::uint16_t>(v);
    return std::move(w.buffer());
}

SpikeVolume decode_volume(const std::vector<unsigned char>& bytes, std::size_t& offset) {
    if (offset > bytes.size()) throw Error(ErrorKind::MalformedHeader, "offset past end");
    io::ByteReader r(bytes, offset);
    if (!r.has(kVolumeHeaderBytes) || r.bytes(4) != "SPKV") {
        throw Error(ErrorKind::MalformedHeader, "missing SPKV magic");
    }
    const auto version = r.get<std::uint16_t>();
    if (version != kVolumeFileVersion) {
        throw Error(ErrorKind::VersionMismatch, "volume file version " + std::to_string(version));
    }
    const std::uint16_t dims[4] = {r.get<std::uint16_t>(), r.get<std::uint16_t>(), r.get<std::uint16_t>(),
                                   r.get<std::uint16_t>()};
    if (dims[0] != kSteps || dims[1] != kChannels || dims[2] != kGrid || dims[3] != kGrid) {
        throw Error(ErrorKind::ShapeMismatch, "volume dims must be (30, 1, 20, 20)");
    }
    SpikeVolume vol;
    for (auto& v : vol.data) v = r.get<std::uint16_t>();
    offset = r.position();
    return vol;
}

void save_volumes(const std::vector<SpikeVolume>& volumes, const std::filesystem::path& path) {
    std::vector<unsigned char> all;
    for (const auto& v : volumes) {
        auto rec = encode_volume(v);
        all.insert(all.end(), rec.begin(), rec.end());
    }
    io::write_file(path, all);
}

std::vector<SpikeVolume> load_volumes(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    std::vector<SpikeVolume> out;
    std::size_t offset = 0;
    while (offset < bytes.size()) out.push_back(decode_volume(bytes, offset));
    return out;
}

} // namespace slipnet
