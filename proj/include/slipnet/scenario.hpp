#pragma once

#include <cstdint>
#include <string>

namespace slipnet {

enum class ScenarioKind { Kinematic, Gravity };
enum class Side { Left, Right };

/// Experimental condition of one trial. Kinematic trials use depth/speed/
/// direction; gravity trials use mass/retraction/disturbance.
struct ScenarioConfig {
    ScenarioKind kind = ScenarioKind::Kinematic;

    double depth_mm = 3.0;
    double speed_mm_s = 1.0;
    double direction_deg = 0.0;

    double mass_kg = 0.205;
    double retraction_mm_s = 0.5;
    double disturbance_fraction = 0.0;
    Side disturbance_side = Side::Right;

    std::uint64_t seed = 0;
    /// Allows values outside the experimental grids (generalization runs).
    bool off_grid = false;

    bool operator==(const ScenarioConfig&) const = default;
};

std::string to_string(ScenarioKind kind);
std::string to_string(Side side);

/// Key-value text form ("key = value" per line, '#' comments).
std::string format_scenario(const ScenarioConfig& config);
ScenarioConfig parse_scenario(const std::string& text);

/// Throws InvalidConfig when a value is off the experimental grids and
/// `off_grid` is not set.
void validate_scenario(const ScenarioConfig& config);

} // namespace slipnet
