#pragma once

#include "slipnet/events.hpp"
#include "slipnet/scenario.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace slipnet::sim {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double norm() const;
};

constexpr std::size_t kRings = 4; // center + 3 concentric layers

struct Papilla {
    std::size_t ring = 0;
    std::size_t index_in_ring = 0;
    Vec2 rest_mm;          // position in the sensor plane
    double height_mm = 0;  // protrusion above the skin plane
};

/// Concentric papillae skin. Lengths in mm.
struct SkinGeometry {
    double h_c = 10.1; // central papilla height
    double d_h = 1.1;  // height decrement per ring
    double d_c = 5.6;  // ring spacing
    double r = 2.0;    // papilla radius
    std::array<std::size_t, kRings> ring_counts{1, 6, 12, 18};

    std::vector<Papilla> papillae; // filled by build_geometry

    double ring_height(std::size_t ring) const { return h_c - static_cast<double>(ring) * d_h; }
    double ring_radius(std::size_t ring) const { return static_cast<double>(ring) * d_c; }
};

/// Validates the parameters and lays papillae out on rings of radius
/// ring * d_c, starting at the top (+y towards the sensor's upper edge) and
/// mirror-symmetric about the vertical axis. Throws GeometryViolation.
SkinGeometry build_geometry(SkinGeometry params = {});

/// Index of the papilla that mirrors `i` about the vertical axis.
std::size_t mirror_index(const SkinGeometry& geometry, std::size_t i);

struct MechanicsParams {
    double k_n = 1.0;     // normal stiffness, N/mm
    double k_t = 0.5;     // shear stiffness, N/mm
    double mu_s = 1.2;    // static friction
    double mu_k = 0.8;    // kinetic friction
    double eta = 0.02;    // slip viscosity, N s/mm
    double g = 9.81;      // m/s^2
    double dt_s = 1e-4;   // integration step
};

/// Per-papilla normal force N_i = k_n * max(0, depth - (h_c - h_i)).
std::vector<double> normal_forces(const SkinGeometry& geometry, double depth_mm, double k_n = 1.0);

enum class Mode : std::uint8_t { Stick, Slip };

struct PapillaState {
    Vec2 deflection_mm;      // tip shear deflection relative to its base
    Mode mode = Mode::Stick;
    double normal_n = 0.0;
    double compression_mm = 0.0;
    bool in_contact = false;
    Vec2 tip_displacement_mm; // cumulative tip motion relative to the counter-surface
    double slip_speed_mm_s = 0.0;
};

struct StepOutcome {
    // Per papilla, for the step just taken.
    std::vector<double> deform_speed; // |d deflection/dt| + |d compression/dt|
    std::vector<std::uint8_t> started_slip; // Stick -> Slip while in contact
};

/// One explicit step. `surface_velocity` is the counter-surface velocity in
/// the sensor frame; `depth_mm` is the indentation at the end of the step.
/// dt must be in (0, 1 ms].
StepOutcome step_dynamics(std::vector<PapillaState>& state, const SkinGeometry& geometry,
                          const MechanicsParams& mech, double dt_s, Vec2 surface_velocity, double depth_mm);
/// Same, writing into a reused outcome buffer.
void step_dynamics(std::vector<PapillaState>& state, const SkinGeometry& geometry, const MechanicsParams& mech,
                   double dt_s, Vec2 surface_velocity, double depth_mm, StepOutcome& out);

/// Quasi-static plate velocity along +y that keeps the summed spring force of
/// the contacting papillae equal to `weight_n` after the next step.
double plate_velocity(const std::vector<PapillaState>& state, const SkinGeometry& geometry,
                      const MechanicsParams& mech, double dt_s, double weight_n, double next_depth_mm,
                      double horizontal_velocity, std::span<const std::size_t> order);

/// Sampled state history at the simulation step.
struct Trajectory {
    double dt_s = 1e-4;
    std::size_t papillae = 0;
    std::size_t steps = 0;
    std::vector<float> deform_speed;   // [step][papilla], mm/s
    std::vector<float> slip_speed;     // [step][papilla], mm/s
    std::vector<float> tip_displacement; // [step][papilla], |mm|
    std::vector<std::uint8_t> contact; // [step][papilla]
    /// Step index of each papilla's first Stick->Slip transition in contact.
    std::vector<std::optional<std::size_t>> first_slip_step;

    std::size_t at(std::size_t step, std::size_t papilla) const { return step * papillae + papilla; }
    /// End of step k in microseconds.
    std::uint64_t step_end_us(std::size_t step) const;
};

struct EventModel {
    double alpha = 400.0;           // events per mm of papilla deformation
    double vibration_gain = 40.0;   // events per mm of sliding
    double vibration_saturation_mm_s = 2.0;
    double lambda_bg = 50.0;        // background events/s over the frame
    double beta = 0.05;             // negative-polarity share of background
    double r_px = 25.0;             // footprint radius
    double px_per_mm = 10.0;
};

/// Inhomogeneous Poisson events per papilla (rate alpha*deform + saturating
/// sliding vibration) over its disk footprint, plus frame-wide background.
/// `mirror` reflects the image about the vertical axis and swaps the RNG
/// streams of mirrored papillae, so left/right scenarios are exact mirrors.
EventStream generate_events(const Trajectory& trajectory, const SkinGeometry& geometry, const EventModel& model,
                            std::uint64_t rng_seed, bool mirror = false);

struct Onsets {
    std::optional<std::uint64_t> incipient_us;
    std::optional<std::uint64_t> gross_us;
};

/// Incipient: first time any contacting papilla's tip displacement exceeds
/// the threshold. Gross: first time the central papilla's does. Throws
/// NoSlipOccurred if no papilla ever exceeds it.
Onsets ground_truth_onsets(const Trajectory& trajectory, const SkinGeometry& geometry, double threshold_mm);

struct Protocol {
    double slip_threshold_mm = 0.1;
    double height_jitter_mm = 0.03;  // per-papilla fabrication spread (rings 1-3)
    // Kinematic
    double press_speed_mm_s = 5.0;
    double hold_s = 0.5;
    double travel_mm = 15.0;
    // Gravity
    double gravity_start_depth_mm = 3.0;
    double gravity_hold_s = 1.0;
    double gravity_after_gross_s = 2.0;
    double gravity_max_s = 60.0;
};

struct SimParams {
    SkinGeometry geometry;
    MechanicsParams mechanics;
    EventModel events;
    Protocol protocol;
};

struct SimulationResult {
    Trajectory trajectory;
    SkinGeometry geometry; // with this trial's height jitter applied
    Onsets onsets;
    /// First Stick->Slip time per ring (absent if no papilla of the ring slipped in contact).
    std::array<std::optional<std::uint64_t>, kRings> ring_first_slip_us{};
};

/// Runs the mechanics only (no events).
SimulationResult simulate(const ScenarioConfig& config, const SimParams& params = {});

/// Full trial: mechanics, events and ground-truth onsets. Throws
/// GeometryViolation, InvalidConfig or NoSlipOccurred.
Trial run_scenario(const ScenarioConfig& config, const SimParams& params = {});

} // namespace slipnet::sim
