#include "slipnet/sim.hpp"

#include "slipnet/error.hpp"
#include "slipnet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace slipnet::sim {

double Vec2::norm() const {
    return std::hypot(x, y);
}

// ---------------------------------------------------------------------------
// Geometry

SkinGeometry build_geometry(SkinGeometry g) {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::GeometryViolation, what); };
    if (!(g.d_h > 0.0) || !(g.h_c > 2.0 * g.d_h)) fail("need h_c > 2*d_h > 0");
    if (!(g.r > 0.0) || !(g.d_c > 2.0 * g.r)) fail("need d_c > 2*r (papillae overlap)");
    if (!(g.ring_height(kRings - 1) > 0.0)) fail("outer ring height must be positive");
    if (g.ring_counts[0] != 1) fail("the center ring holds exactly one papilla");
    for (std::size_t ring = 1; ring < kRings; ++ring) {
        if (g.ring_counts[ring] == 0) fail("empty ring");
        // Chord between neighbours must also clear 2r.
        const double chord = 2.0 * g.ring_radius(ring) * std::sin(std::numbers::pi / static_cast<double>(g.ring_counts[ring]));
        if (g.ring_counts[ring] > 1 && !(chord > 2.0 * g.r)) fail("ring " + std::to_string(ring) + " too crowded");
    }

    g.papillae.clear();
    for (std::size_t ring = 0; ring < kRings; ++ring) {
        const std::size_t k = g.ring_counts[ring];
        const double radius = g.ring_radius(ring);
        const std::size_t base = g.papillae.size();
        for (std::size_t j = 0; j < k; ++j) {
            Papilla p{ring, j, {}, g.ring_height(ring)};
            if (ring == 0) {
                p.rest_mm = {0.0, 0.0};
            } else if (2 * j > k) {
                // Exact reflection of papilla k - j keeps the layout bit-symmetric.
                const Vec2 m = g.papillae[base + (k - j)].rest_mm;
                p.rest_mm = {-m.x, m.y};
            } else if (j == 0 || 2 * j == k) {
                p.rest_mm = {0.0, j == 0 ? -radius : radius}; // image y grows downwards; j = 0 is the top
            } else {
                const double theta = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(k);
                p.rest_mm = {radius * std::sin(theta), -radius * std::cos(theta)};
            }
            g.papillae.push_back(p);
        }
    }
    return g;
}

std::size_t mirror_index(const SkinGeometry& geometry, std::size_t i) {
    const Papilla& p = geometry.papillae.at(i);
    const std::size_t k = geometry.ring_counts[p.ring];
    const std::size_t base = i - p.index_in_ring;
    return base + (k - p.index_in_ring) % k;
}

std::vector<double> normal_forces(const SkinGeometry& geometry, double depth_mm, double k_n) {
    std::vector<double> out;
    out.reserve(geometry.papillae.size());
    for (const Papilla& p : geometry.papillae) {
        out.push_back(k_n * std::max(0.0, depth_mm - (geometry.h_c - p.height_mm)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dynamics

namespace {

struct SlipPrediction {
    Mode mode;
    double slip_speed; // tip speed relative to the surface, along -deflection
};

/// Mode and slip speed a contacting papilla will use for the coming step.
SlipPrediction predict(const PapillaState& s, double normal, const MechanicsParams& mech) {
    Mode mode = s.in_contact ? s.mode : Mode::Stick; // landing papillae grip
    const double mag = s.deflection_mm.norm();
    if (mode == Mode::Stick && mech.k_t * mag > mech.mu_s * normal) mode = Mode::Slip;
    if (mode == Mode::Slip) {
        const double u = mag > 0.0 ? (mech.k_t * mag - mech.mu_k * normal) / mech.eta : 0.0;
        if (u > 0.0) return {Mode::Slip, u};
        return {Mode::Stick, 0.0};
    }
    return {Mode::Stick, 0.0};
}

double compression(const SkinGeometry& geometry, std::size_t i, double depth_mm) {
    return std::max(0.0, depth_mm - (geometry.h_c - geometry.papillae[i].height_mm));
}

} // namespace

StepOutcome step_dynamics(std::vector<PapillaState>& state, const SkinGeometry& geometry,
                          const MechanicsParams& mech, double dt_s, Vec2 v, double depth_mm) {
    StepOutcome out;
    step_dynamics(state, geometry, mech, dt_s, v, depth_mm, out);
    return out;
}

void step_dynamics(std::vector<PapillaState>& state, const SkinGeometry& geometry, const MechanicsParams& mech,
                   double dt_s, Vec2 v, double depth_mm, StepOutcome& out) {
    if (!(dt_s > 0.0) || dt_s > 1e-3) throw Error(ErrorKind::InvalidConfig, "dt must be in (0, 1 ms]");
    if (state.size() != geometry.papillae.size()) throw Error(ErrorKind::ShapeMismatch, "state/geometry size");

    out.deform_speed.assign(state.size(), 0.0);
    out.started_slip.assign(state.size(), 0);
    const double free_decay = std::exp(-mech.k_t * dt_s / mech.eta);

    for (std::size_t i = 0; i < state.size(); ++i) {
        PapillaState& s = state[i];
        const Vec2 old_deflection = s.deflection_mm;
        const double c = compression(geometry, i, depth_mm);
        const double normal = mech.k_n * c;
        const double dc = std::abs(c - s.compression_mm);
        s.compression_mm = c;
        s.normal_n = normal;

        if (!(normal > 0.0)) {
            // Out of contact: the tip springs back freely.
            s.in_contact = false;
            s.mode = Mode::Slip;
            s.slip_speed_mm_s = 0.0;
            s.deflection_mm = s.deflection_mm * free_decay;
        } else {
            const Mode before = s.in_contact ? s.mode : Mode::Stick;
            const SlipPrediction p = predict(s, normal, mech);
            s.in_contact = true;
            if (before == Mode::Stick && p.mode == Mode::Slip) out.started_slip[i] = 1;
            s.mode = p.mode;
            s.slip_speed_mm_s = p.slip_speed;
            if (p.mode == Mode::Slip) {
                const double mag = s.deflection_mm.norm();
                const Vec2 dir = s.deflection_mm * (1.0 / mag);
                s.deflection_mm = s.deflection_mm + (v - dir * p.slip_speed) * dt_s;
                s.tip_displacement_mm = s.tip_displacement_mm - dir * (p.slip_speed * dt_s);
            } else {
                s.deflection_mm = s.deflection_mm + v * dt_s;
            }
        }
        out.deform_speed[i] = (s.deflection_mm - old_deflection).norm() / dt_s + dc / dt_s;
    }
}

double plate_velocity(const std::vector<PapillaState>& state, const SkinGeometry& geometry,
                      const MechanicsParams& mech, double dt_s, double weight_n, double next_depth_mm,
                      double /*horizontal_velocity*/, std::span<const std::size_t> order) {
    // Contacting papillae move as d(defl)/dt = v - u * dir; requiring
    // sum(k_t * defl_y) = W after the step fixes v_y.
    double sum_defl = 0.0;
    double sum_slip = 0.0;
    std::size_t n = 0;
    for (std::size_t i : order) {
        const double normal = mech.k_n * compression(geometry, i, next_depth_mm);
        if (!(normal > 0.0)) continue;
        const PapillaState& s = state[i];
        ++n;
        sum_defl += s.deflection_mm.y;
        const SlipPrediction p = predict(s, normal, mech);
        if (p.mode == Mode::Slip) sum_slip += p.slip_speed * (s.deflection_mm.y / s.deflection_mm.norm());
    }
    if (n == 0) return 0.0;
    return (weight_n / mech.k_t - sum_defl + dt_s * sum_slip) / (static_cast<double>(n) * dt_s);
}

// ---------------------------------------------------------------------------
// Trajectories, events, onsets

std::uint64_t Trajectory::step_end_us(std::size_t step) const {
    return static_cast<std::uint64_t>(std::llround(static_cast<double>(step + 1) * dt_s * 1e6));
}

namespace {

/// Pixel index of a coordinate given relative to the frame center. Mirror
/// exact: X and -X land on pixels symmetric about the center line.
int pixel(double rel, int center) {
    if (std::signbit(rel)) return center - 1 - static_cast<int>(std::floor(-rel));
    return center + static_cast<int>(std::floor(rel));
}

/// Canonical (mirror-invariant) visiting order of papillae.
std::vector<std::size_t> canonical_order(const SkinGeometry& geometry, bool mirror) {
    std::vector<std::size_t> order(geometry.papillae.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = mirror ? mirror_index(geometry, i) : i;
    return order;
}

} // namespace

EventStream generate_events(const Trajectory& traj, const SkinGeometry& geometry, const EventModel& model,
                            std::uint64_t rng_seed, bool mirror) {
    if (traj.dt_s > 1e-3) throw Error(ErrorKind::InvalidConfig, "trajectory must be sampled at <= 1 ms");
    if (traj.papillae != geometry.papillae.size()) throw Error(ErrorKind::ShapeMismatch, "trajectory/geometry size");

    EventStream stream;
    auto& events = stream.events;
    const auto step_us = static_cast<std::uint64_t>(std::llround(traj.dt_s * 1e6));
    const int cx = kSensorWidth / 2;
    const int cy = kSensorHeight / 2;
    auto vibration = [&](double u) {
        const double sat = model.vibration_saturation_mm_s;
        return model.vibration_gain * sat * (1.0 - std::exp(-u / sat));
    };

    const auto order = canonical_order(geometry, mirror);
    for (std::size_t canon = 0; canon < order.size(); ++canon) {
        const std::size_t i = order[canon];
        Rng rng(derive_seed(rng_seed, "papilla", canon));
        const double x0 = geometry.papillae[i].rest_mm.x * model.px_per_mm;
        const double y0 = geometry.papillae[i].rest_mm.y * model.px_per_mm;
        // Time-rescaling: an event fires whenever the integrated intensity
        // passes the next unit-exponential mark.
        double integrated = 0.0;
        double next_mark = rng.exponential();
        for (std::size_t k = 0; k < traj.steps; ++k) {
            const std::size_t at = traj.at(k, i);
            double rate = model.alpha * traj.deform_speed[at];
            if (traj.contact[at]) rate += vibration(traj.slip_speed[at]);
            integrated += rate * traj.dt_s;
            while (integrated >= next_mark) {
                next_mark += rng.exponential();
                const std::uint64_t t = k * step_us + rng.below(step_us);
                const double rho = model.r_px * std::sqrt(rng.uniform());
                const double phi = 2.0 * std::numbers::pi * rng.uniform();
                double dx = rho * std::cos(phi);
                const double dy = rho * std::sin(phi);
                if (mirror) dx = -dx;
                const int px = std::clamp(pixel(x0 + dx, cx), 0, kSensorWidth - 1);
                const int py = std::clamp(pixel(y0 + dy, cy), 0, kSensorHeight - 1);
                events.push_back({t, static_cast<std::uint16_t>(px), static_cast<std::uint16_t>(py), 1});
            }
        }
    }

    if (model.lambda_bg > 0.0) {
        Rng rng(derive_seed(rng_seed, "background", 0));
        const double duration_s = static_cast<double>(traj.steps * step_us) * 1e-6;
        double t = 0.0;
        while (true) {
            t += rng.exponential() / model.lambda_bg;
            if (t >= duration_s) break;
            const auto t_us = static_cast<std::uint64_t>(std::floor(t * 1e6));
            auto x = static_cast<std::uint16_t>(rng.below(kSensorWidth));
            const auto y = static_cast<std::uint16_t>(rng.below(kSensorHeight));
            const std::int8_t pol = rng.uniform() < model.beta ? -1 : 1;
            if (mirror) x = static_cast<std::uint16_t>(kSensorWidth - 1 - x);
            events.push_back({t_us, x, y, pol});
        }
    }

    std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
    return stream;
}

namespace {

Onsets find_onsets(const Trajectory& traj, double threshold_mm) {
    Onsets out;
    for (std::size_t k = 0; k < traj.steps && !out.gross_us; ++k) {
        for (std::size_t i = 0; i < traj.papillae; ++i) {
            const std::size_t at = traj.at(k, i);
            if (!traj.contact[at] || !(traj.tip_displacement[at] > threshold_mm)) continue;
            if (!out.incipient_us) out.incipient_us = traj.step_end_us(k);
            if (i == 0) {
                out.gross_us = traj.step_end_us(k);
                break;
            }
        }
    }
    return out;
}

} // namespace

Onsets ground_truth_onsets(const Trajectory& trajectory, const SkinGeometry& geometry, double threshold_mm) {
    if (trajectory.papillae != geometry.papillae.size()) {
        throw Error(ErrorKind::ShapeMismatch, "trajectory/geometry size");
    }
    Onsets out = find_onsets(trajectory, threshold_mm);
    if (!out.incipient_us) throw Error(ErrorKind::NoSlipOccurred, "no papilla exceeded the slip threshold");
    return out;
}

// ---------------------------------------------------------------------------
// Scenarios

namespace {

bool mirrored(const ScenarioConfig& c) {
    return c.kind == ScenarioKind::Gravity && c.disturbance_fraction > 0.0 && c.disturbance_side == Side::Left;
}

SkinGeometry jittered_geometry(const SimParams& params, const ScenarioConfig& config) {
    SkinGeometry g = build_geometry(params.geometry);
    const auto order = canonical_order(g, mirrored(config));
    for (std::size_t canon = 0; canon < order.size(); ++canon) {
        Papilla& p = g.papillae[order[canon]];
        if (p.ring == 0 || params.protocol.height_jitter_mm <= 0.0) continue;
        Rng rng(derive_seed(config.seed, "height", canon));
        p.height_mm += params.protocol.height_jitter_mm * rng.normal();
    }
    return g;
}

class Recorder {
public:
    Recorder(Trajectory& traj, std::size_t papillae, double dt_s) : traj_(traj) {
        traj_.dt_s = dt_s;
        traj_.papillae = papillae;
        traj_.steps = 0;
        traj_.first_slip_step.assign(papillae, std::nullopt);
    }

    void reserve(std::size_t steps) {
        const std::size_t n = steps * traj_.papillae;
        traj_.deform_speed.reserve(n);
        traj_.slip_speed.reserve(n);
        traj_.tip_displacement.reserve(n);
        traj_.contact.reserve(n);
    }

    void record(const std::vector<PapillaState>& state, const StepOutcome& step) {
        for (std::size_t i = 0; i < state.size(); ++i) {
            traj_.deform_speed.push_back(static_cast<float>(step.deform_speed[i]));
            traj_.slip_speed.push_back(static_cast<float>(state[i].slip_speed_mm_s));
            traj_.tip_displacement.push_back(static_cast<float>(state[i].tip_displacement_mm.norm()));
            traj_.contact.push_back(state[i].in_contact ? 1 : 0);
            if (step.started_slip[i] && !traj_.first_slip_step[i]) traj_.first_slip_step[i] = traj_.steps;
        }
        ++traj_.steps;
    }

private:
    Trajectory& traj_;
};

void run_kinematic(const ScenarioConfig& c, const SimParams& params, SimulationResult& res) {
    const auto& mech = params.mechanics;
    const auto& proto = params.protocol;
    const double dt = mech.dt_s;
    const double press_s = c.depth_mm / proto.press_speed_mm_s;
    const double slide_start = press_s + proto.hold_s;
    const double total = slide_start + proto.travel_mm / c.speed_mm_s;
    const auto steps = static_cast<std::size_t>(std::ceil(total / dt));

    const double theta = c.direction_deg * std::numbers::pi / 180.0;
    // The sensor moves along `theta`; the plate moves the other way in the sensor frame.
    const Vec2 slide{-c.speed_mm_s * std::cos(theta), -c.speed_mm_s * std::sin(theta)};

    std::vector<PapillaState> state(res.geometry.papillae.size());
    Recorder rec(res.trajectory, state.size(), dt);
    rec.reserve(steps);
    StepOutcome out;
    for (std::size_t k = 0; k < steps; ++k) {
        const double t_end = static_cast<double>(k + 1) * dt;
        const double depth = std::min(c.depth_mm, proto.press_speed_mm_s * t_end);
        const Vec2 v = t_end > slide_start ? slide : Vec2{};
        step_dynamics(state, res.geometry, mech, dt, v, depth, out);
        rec.record(state, out);
    }
}

void run_gravity(const ScenarioConfig& c, const SimParams& params, SimulationResult& res) {
    const auto& mech = params.mechanics;
    const auto& proto = params.protocol;
    const double dt = mech.dt_s;
    const double weight = c.mass_kg * mech.g;
    const double d0 = proto.gravity_start_depth_mm;
    const bool mirror = mirrored(c);
    const auto order = canonical_order(res.geometry, mirror);
    // Surface velocity relative to the sensor opposes the sensor's sideways motion.
    const double side = c.disturbance_side == Side::Right ? 1.0 : -1.0;
    const double sideways = -side * c.disturbance_fraction * c.retraction_mm_s;

    // Plate hanging in equilibrium on stuck papillae.
    std::vector<PapillaState> state(res.geometry.papillae.size());
    std::size_t contacts = 0;
    for (std::size_t i = 0; i < state.size(); ++i) {
        state[i].compression_mm = compression(res.geometry, i, d0);
        state[i].normal_n = mech.k_n * state[i].compression_mm;
        state[i].in_contact = state[i].normal_n > 0.0;
        contacts += state[i].in_contact ? 1 : 0;
    }
    if (contacts == 0) throw Error(ErrorKind::InvalidConfig, "gravity start depth leaves no papilla in contact");
    for (auto& s : state) {
        if (s.in_contact) s.deflection_mm = {0.0, weight / (static_cast<double>(contacts) * mech.k_t)};
    }

    Recorder rec(res.trajectory, state.size(), dt);
    rec.reserve(static_cast<std::size_t>((proto.gravity_hold_s + d0 / c.retraction_mm_s) / dt));
    const auto max_steps = static_cast<std::size_t>(std::ceil(proto.gravity_max_s / dt));
    const auto after_gross = static_cast<std::size_t>(std::llround(proto.gravity_after_gross_s / dt));
    std::optional<std::size_t> gross_step;
    std::optional<std::size_t> detached_step;
    StepOutcome out;

    for (std::size_t k = 0; k < max_steps; ++k) {
        const double t_end = static_cast<double>(k + 1) * dt;
        const bool retracting = t_end > proto.gravity_hold_s;
        const double depth = retracting ? std::max(0.0, d0 - c.retraction_mm_s * (t_end - proto.gravity_hold_s)) : d0;
        const double vx = retracting ? sideways : 0.0;
        const double vy = plate_velocity(state, res.geometry, mech, dt, weight, depth, vx, order);
        step_dynamics(state, res.geometry, mech, dt, {vx, vy}, depth, out);
        rec.record(state, out);

        if (!gross_step && state[0].in_contact && state[0].tip_displacement_mm.norm() > proto.slip_threshold_mm) {
            gross_step = k;
        }
        if (!detached_step && std::none_of(state.begin(), state.end(), [](const PapillaState& s) { return s.in_contact; })) {
            detached_step = k;
        }
        if (gross_step && k >= *gross_step + after_gross) break;
        if (detached_step && k >= *detached_step + after_gross) break;
    }
}

} // namespace

SimulationResult simulate(const ScenarioConfig& config, const SimParams& params) {
    validate_scenario(config);
    SimulationResult res;
    res.geometry = jittered_geometry(params, config);
    if (config.kind == ScenarioKind::Kinematic) {
        run_kinematic(config, params, res);
    } else {
        run_gravity(config, params, res);
    }
    res.onsets = find_onsets(res.trajectory, params.protocol.slip_threshold_mm);
    for (std::size_t i = 0; i < res.geometry.papillae.size(); ++i) {
        const auto& first = res.trajectory.first_slip_step[i];
        if (!first) continue;
        auto& slot = res.ring_first_slip_us[res.geometry.papillae[i].ring];
        const std::uint64_t t = res.trajectory.step_end_us(*first);
        if (!slot || t < *slot) slot = t;
    }
    return res;
}

Trial run_scenario(const ScenarioConfig& config, const SimParams& params) {
    SimulationResult res = simulate(config, params);
    if (!res.onsets.incipient_us) {
        throw Error(ErrorKind::NoSlipOccurred, "scenario produced no slip (seed " + std::to_string(config.seed) + ")");
    }
    Trial trial;
    trial.stream = generate_events(res.trajectory, res.geometry, params.events, derive_seed(config.seed, "events", 0),
                                   mirrored(config));
    trial.incipient_onset_us = res.onsets.incipient_us;
    trial.gross_onset_us = res.onsets.gross_us;
    trial.scenario = config;
    return trial;
}

} // namespace slipnet::sim
