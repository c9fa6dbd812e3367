#pragma once

#include "slipnet/detect.hpp"
#include "slipnet/sim.hpp"
#include "slipnet/snn.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace slipnet::harness {

inline constexpr const char* kToolVersion = "0.1.0";

enum class Grid { Kinematic, Gravity, Disturbance };
std::string to_string(Grid grid);

/// Run configuration, read from "key = value" text. Relative paths resolve
/// against `output_dir`.
struct SuiteConfig {
    std::filesystem::path output_dir = "slipnet_run";
    std::filesystem::path trial_dir = "trials";
    std::filesystem::path dataset_dir = "dataset";
    std::filesystem::path weights_path = "weights.snnw";
    std::filesystem::path report_dir = "reports";

    std::vector<Grid> simulate_grids{Grid::Kinematic, Grid::Gravity, Grid::Disturbance};
    std::vector<Grid> detect_grids{Grid::Gravity, Grid::Disturbance};

    std::size_t kinematic_repeats = 1;
    std::size_t gravity_trials = 5;     // per weight x retraction condition
    std::size_t disturbance_trials = 5; // per disturbance level, sides alternate

    std::uint64_t seed = 1;

    snn::TrainParams train;
    detect::SmootherConfig smoother;
    sim::SimParams sim;

    /// Paper-sized grids: 3 kinematic repeats, 20 trials per gravity and disturbance condition.
    void apply_paper_scale();
    std::filesystem::path resolve(const std::filesystem::path& p) const;
    /// Normalised text form, used for the config digest.
    std::string format() const;
    /// Digest of format() without the output_dir line.
    std::uint64_t digest() const;
};

/// Throws InvalidConfig on unknown keys or malformed values.
SuiteConfig parse_suite(const std::string& text);
SuiteConfig load_suite(const std::filesystem::path& path);

struct TrialSpec {
    std::string id;        // file stem, e.g. "kinematic_0007"
    Grid grid = Grid::Kinematic;
    std::string condition; // grouping key for summaries
    std::size_t condition_index = 0;
    ScenarioConfig scenario;
};

/// Full factorial for a grid in deterministic order; per-trial seeds come
/// from the global seed, the grid name and the trial's index.
std::vector<TrialSpec> grid_trials(Grid grid, const SuiteConfig& config);

/// Trial metadata kept next to the event files (the event format carries only onsets).
struct TrialRecord {
    TrialSpec spec;
    std::optional<std::uint64_t> incipient_us;
    std::optional<std::uint64_t> gross_us;
    std::size_t events = 0;
};

std::string format_trial_index(const std::vector<TrialRecord>& records);
std::vector<TrialRecord> parse_trial_index(const std::string& text);

/// key = value record of tool version, config digest, seed and per-stage digests.
struct RunManifest {
    std::map<std::string, std::string> entries;

    static RunManifest load(const std::filesystem::path& path); // empty when missing
    void save(const std::filesystem::path& path) const;
};

/// FNV-1a over the named files' bytes, in the given order.
std::uint64_t digest_files(const std::vector<std::filesystem::path>& files);

struct SimulateOutcome {
    std::vector<TrialRecord> trials;
};

struct BuildOutcome {
    std::size_t train = 0, validation = 0, test = 0;
    std::array<std::size_t, 3> class_counts{};
};

struct TrainOutcome {
    snn::TrainResult result;
};

struct EvalOutcome {
    snn::Confusion confusion;
};

struct DetectOutcome {
    std::vector<std::pair<TrialRecord, detect::DetectionReport>> reports;
    std::vector<detect::ConditionSummary> summaries;
};

// Stages. Progress goes to `log`; failures throw slipnet::Error.
SimulateOutcome cmd_simulate(const SuiteConfig& config, std::ostream& log);
BuildOutcome cmd_build_dataset(const SuiteConfig& config, std::ostream& log, bool write_volumes = false);
TrainOutcome cmd_train(const SuiteConfig& config, std::ostream& log);
EvalOutcome cmd_eval(const SuiteConfig& config, std::ostream& log);
DetectOutcome cmd_detect(const SuiteConfig& config, std::ostream& log);

/// Loads the examples of one split ("train", "validation", "test") from the dataset manifest.
std::vector<snn::Example> load_split(const SuiteConfig& config, const std::string& split);

/// Worker count: SLIPNET_THREADS if set, else the hardware concurrency.
std::size_t thread_count();

/// CLI entry point. Returns 0 on success, 1 on validation failures, 2 on usage or path errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace slipnet::harness
