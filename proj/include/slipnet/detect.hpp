#pragma once

#include "slipnet/snn.hpp"

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace slipnet::detect {

struct SmootherConfig {
    std::size_t window_len = 4;
    double margin = 2.0;
};

using Smoothed = std::array<double, 3>;
/// A decided class, or nullopt for Undecided.
using Decision = std::optional<SlipClass>;

/// Prefix-window mean: element k averages raw[max(0, k - window_len + 1) .. k].
/// Throws EmptySequence, InvalidConfig.
std::vector<Smoothed> smooth(std::span<const snn::ClassCounts> raw, const SmootherConfig& config = {});

/// Class i iff smoothed[i] >= smoothed[j] + margin for every j != i.
Decision decide(const Smoothed& smoothed, double margin);

struct WindowRecord {
    std::size_t index = 0;
    std::uint64_t t_end_us = 0;
    snn::ClassCounts raw{};
    Smoothed smoothed{};
    Decision decision;
};

struct DetectionReport {
    std::vector<WindowRecord> windows;
    std::optional<std::uint64_t> detected_incipient_us;
    std::optional<std::uint64_t> detected_gross_us;
    std::optional<std::uint64_t> true_incipient_us;
    std::optional<std::uint64_t> true_gross_us;

    std::optional<double> latency_incipient_ms() const;
    std::optional<double> latency_gross_ms() const;
    /// True gross onset minus detected incipient time.
    std::optional<double> lead_time_ms() const;
    /// Decision changes between consecutive windows; Undecided counts as a state.
    std::size_t flips() const;
};

/// Online state machine over consecutive windows of `window_us`: the first
/// window decided Incipient marks incipient slip at its end time; after that,
/// the first window decided Gross marks gross slip.
DetectionReport run_detector(std::span<const snn::ClassCounts> raw, const SmootherConfig& config,
                             std::uint64_t window_us = kWindowUs);

/// Classifies consecutive non-overlapping 30 ms windows from the trial start
/// and runs the detector. Throws PreprocessError.
DetectionReport detect_trial(const Trial& trial, const snn::NetworkSpec& spec, const snn::Weights& weights,
                             const SmootherConfig& config = {});

/// Raw output counts of every full 30 ms window of a trial.
std::vector<snn::ClassCounts> window_counts(const Trial& trial, const snn::NetworkSpec& spec,
                                            const snn::Weights& weights);

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0; // sample standard deviation; 0 for a single value
    std::size_t n = 0;
};

struct LatencySummary {
    std::size_t trials = 0;
    std::optional<MeanSd> incipient_ms;
    std::optional<MeanSd> gross_ms;
    std::optional<double> min_lead_ms;
    std::size_t missed_incipient = 0; // ground truth present, never detected
    std::size_t missed_gross = 0;
};

/// Throws EmptyInput.
LatencySummary latency_stats(std::span<const DetectionReport> reports);

/// window_index,t_end_us,raw0..2,smooth0..2,decision
std::string format_report(const DetectionReport& report);

struct ConditionSummary {
    std::string condition;
    LatencySummary summary;
};

/// condition,n,mean/sd latencies,min lead time,missed counts
std::string format_summary(std::span<const ConditionSummary> rows);

std::string to_string(const Decision& decision);

} // namespace slipnet::detect
