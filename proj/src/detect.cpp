#include "slipnet/detect.hpp"

#include "slipnet/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

namespace slipnet::detect {

namespace {

std::string fixed(double v, int digits) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
    (void)ec;
    return std::string(buf, end);
}

std::string opt(const std::optional<double>& v) {
    return v ? fixed(*v, 3) : std::string{};
}

double ms_between(std::uint64_t later, std::uint64_t earlier) {
    return (static_cast<double>(later) - static_cast<double>(earlier)) / 1000.0;
}

MeanSd mean_sd(const std::vector<double>& xs) {
    MeanSd m;
    m.n = xs.size();
    for (double x : xs) m.mean += x;
    m.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - m.mean) * (x - m.mean);
        m.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return m;
}

} // namespace

std::vector<Smoothed> smooth(std::span<const snn::ClassCounts> raw, const SmootherConfig& config) {
    if (raw.empty()) throw Error(ErrorKind::EmptySequence, "no windows to smooth");
    if (config.window_len == 0) throw Error(ErrorKind::InvalidConfig, "window_len must be >= 1");
    std::vector<Smoothed> out(raw.size());
    for (std::size_t k = 0; k < raw.size(); ++k) {
        const std::size_t first = k + 1 >= config.window_len ? k + 1 - config.window_len : 0;
        Smoothed sum{};
        for (std::size_t j = first; j <= k; ++j) {
            for (std::size_t c = 0; c < 3; ++c) sum[c] += raw[j][c];
        }
        for (std::size_t c = 0; c < 3; ++c) out[k][c] = sum[c] / static_cast<double>(k - first + 1);
    }
    return out;
}

Decision decide(const Smoothed& s, double margin) {
    for (std::size_t i = 0; i < 3; ++i) {
        bool wins = true;
        for (std::size_t j = 0; j < 3 && wins; ++j) {
            if (j != i && !(s[i] >= s[j] + margin && s[i] > s[j])) wins = false;
        }
        if (wins) return static_cast<SlipClass>(i);
    }
    return std::nullopt;
}

std::optional<double> DetectionReport::latency_incipient_ms() const {
    if (!detected_incipient_us || !true_incipient_us) return std::nullopt;
    return ms_between(*detected_incipient_us, *true_incipient_us);
}

std::optional<double> DetectionReport::latency_gross_ms() const {
    if (!detected_gross_us || !true_gross_us) return std::nullopt;
    return ms_between(*detected_gross_us, *true_gross_us);
}

std::optional<double> DetectionReport::lead_time_ms() const {
    if (!detected_incipient_us || !true_gross_us) return std::nullopt;
    return ms_between(*true_gross_us, *detected_incipient_us);
}

std::size_t DetectionReport::flips() const {
    std::size_t n = 0;
    for (std::size_t k = 1; k < windows.size(); ++k) {
        if (windows[k].decision != windows[k - 1].decision) ++n;
    }
    return n;
}

DetectionReport run_detector(std::span<const snn::ClassCounts> raw, const SmootherConfig& config,
                             std::uint64_t window_us) {
    if (!(config.margin >= 0.0)) throw Error(ErrorKind::InvalidConfig, "margin must be >= 0");
    DetectionReport report;
    if (raw.empty()) return report;
    const auto smoothed = smooth(raw, config);
    for (std::size_t k = 0; k < raw.size(); ++k) {
        WindowRecord w;
        w.index = k;
        w.t_end_us = (k + 1) * window_us;
        w.raw = raw[k];
        w.smoothed = smoothed[k];
        w.decision = decide(smoothed[k], config.margin);
        if (!report.detected_incipient_us) {
            if (w.decision == SlipClass::Incipient) report.detected_incipient_us = w.t_end_us;
        } else if (!report.detected_gross_us && w.decision == SlipClass::Gross) {
            report.detected_gross_us = w.t_end_us;
        }
        report.windows.push_back(w);
    }
    return report;
}

std::vector<snn::ClassCounts> window_counts(const Trial& trial, const snn::NetworkSpec& spec,
                                            const snn::Weights& weights) {
    EventStream grid;
    try {
        grid = to_grid(trial.stream);
    } catch (const Error& e) {
        throw Error(ErrorKind::PreprocessError, e.what());
    }
    const std::size_t n = trial.end_us() / kWindowUs;
    std::vector<SparseVolume> volumes;
    volumes.reserve(n);
    for (std::size_t k = 0; k < n; ++k) volumes.push_back(bin_window_sparse(grid, k * kWindowUs));
    return snn::forward_counts(volumes, spec, weights);
}

DetectionReport detect_trial(const Trial& trial, const snn::NetworkSpec& spec, const snn::Weights& weights,
                             const SmootherConfig& config) {
    const auto counts = window_counts(trial, spec, weights);
    DetectionReport report = run_detector(counts, config);
    report.true_incipient_us = trial.incipient_onset_us;
    report.true_gross_us = trial.gross_onset_us;
    return report;
}

LatencySummary latency_stats(std::span<const DetectionReport> reports) {
    if (reports.empty()) throw Error(ErrorKind::EmptyInput, "no detection reports");
    LatencySummary s;
    s.trials = reports.size();
    std::vector<double> inc, gross;
    for (const auto& r : reports) {
        if (auto l = r.latency_incipient_ms()) inc.push_back(*l);
        if (auto l = r.latency_gross_ms()) gross.push_back(*l);
        if (auto lead = r.lead_time_ms()) s.min_lead_ms = s.min_lead_ms ? std::min(*s.min_lead_ms, *lead) : *lead;
        if (r.true_incipient_us && !r.detected_incipient_us) ++s.missed_incipient;
        if (r.true_gross_us && !r.detected_gross_us) ++s.missed_gross;
    }
    if (!inc.empty()) s.incipient_ms = mean_sd(inc);
    if (!gross.empty()) s.gross_ms = mean_sd(gross);
    return s;
}

std::string to_string(const Decision& d) {
    return d ? slipnet::to_string(*d) : std::string("Undecided");
}

std::string format_report(const DetectionReport& report) {
    std::string out = "window_index,t_end_us,raw0,raw1,raw2,smooth0,smooth1,smooth2,decision\n";
    for (const auto& w : report.windows) {
        out += std::to_string(w.index) + "," + std::to_string(w.t_end_us);
        for (auto c : w.raw) out += "," + std::to_string(c);
        for (double c : w.smoothed) out += "," + fixed(c, 4);
        out += "," + to_string(w.decision) + "\n";
    }
    return out;
}

std::string format_summary(std::span<const ConditionSummary> rows) {
    std::string out =
        "condition,n,mean_latency_incipient_ms,sd_latency_incipient_ms,mean_latency_gross_ms,sd_latency_gross_ms,"
        "min_lead_time_ms,missed_incipient,missed_gross\n";
    for (const auto& row : rows) {
        const auto& s = row.summary;
        out += row.condition + "," + std::to_string(s.trials) + ",";
        out += (s.incipient_ms ? fixed(s.incipient_ms->mean, 3) + "," + fixed(s.incipient_ms->sd, 3) : std::string(",")) + ",";
        out += (s.gross_ms ? fixed(s.gross_ms->mean, 3) + "," + fixed(s.gross_ms->sd, 3) : std::string(",")) + ",";
        out += opt(s.min_lead_ms) + "," + std::to_string(s.missed_incipient) + "," + std::to_string(s.missed_gross) + "\n";
    }
    return out;
}

} // namespace slipnet::detect
