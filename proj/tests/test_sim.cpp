#include "slipnet/error.hpp"
#include "slipnet/events.hpp"
#include "slipnet/sim.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <tuple>

using namespace slipnet;
using namespace slipnet::sim;

namespace {

Trajectory blank_trajectory(std::size_t papillae, std::size_t steps, double dt_s = 1e-4) {
    Trajectory t;
    t.dt_s = dt_s;
    t.papillae = papillae;
    t.steps = steps;
    t.deform_speed.assign(papillae * steps, 0.0f);
    t.slip_speed.assign(papillae * steps, 0.0f);
    t.tip_displacement.assign(papillae * steps, 0.0f);
    t.contact.assign(papillae * steps, 0);
    t.first_slip_step.assign(papillae, std::nullopt);
    return t;
}

std::size_t count_in(const EventStream& s, std::uint64_t from_us, std::uint64_t to_us) {
    return static_cast<std::size_t>(std::count_if(s.events.begin(), s.events.end(), [&](const Event& e) {
        return e.t_us >= from_us && e.t_us < to_us;
    }));
}

ScenarioConfig kinematic(double depth, double speed, double dir, std::uint64_t seed) {
    ScenarioConfig c;
    c.depth_mm = depth;
    c.speed_mm_s = speed;
    c.direction_deg = dir;
    c.seed = seed;
    return c;
}

} // namespace

TEST(Geometry, DefaultHeightsAndRadii) {
    const auto g = build_geometry();
    EXPECT_DOUBLE_EQ(g.ring_height(0), 10.1);
    EXPECT_NEAR(g.ring_height(3), 6.8, 1e-12);
    EXPECT_EQ(g.papillae.size(), 37u);
    for (std::size_t ring = 0; ring < kRings; ++ring) EXPECT_NEAR(g.ring_radius(ring), 5.6 * ring, 1e-12);
    for (const auto& p : g.papillae) EXPECT_NEAR(p.rest_mm.norm(), 5.6 * p.ring, 1e-9);
}

TEST(Geometry, OverlapIsRejected) {
    SkinGeometry params;
    params.d_c = 3.9;
    try {
        build_geometry(params);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::GeometryViolation);
    }
}

TEST(Geometry, NegativeOuterHeightIsRejected) {
    SkinGeometry params;
    params.d_h = 4.0;
    EXPECT_THROW(build_geometry(params), Error);
}

TEST(Geometry, MirrorIndexReflectsPositions) {
    const auto g = build_geometry();
    for (std::size_t i = 0; i < g.papillae.size(); ++i) {
        const std::size_t m = mirror_index(g, i);
        EXPECT_EQ(mirror_index(g, m), i);
        EXPECT_EQ(g.papillae[m].ring, g.papillae[i].ring);
        EXPECT_NEAR(g.papillae[m].rest_mm.x, -g.papillae[i].rest_mm.x, 1e-12);
        EXPECT_NEAR(g.papillae[m].rest_mm.y, g.papillae[i].rest_mm.y, 1e-12);
    }
}

TEST(NormalForces, Examples) {
    const auto g = build_geometry();
    const auto shallow = normal_forces(g, 2.4);
    const auto deep = normal_forces(g, 3.4);
    const auto none = normal_forces(g, 0.0);
    for (std::size_t i = 0; i < g.papillae.size(); ++i) {
        if (g.papillae[i].ring == 3) EXPECT_EQ(shallow[i], 0.0);
        if (g.papillae[i].ring == 2) EXPECT_NEAR(deep[i], 1.2, 1e-12);
        EXPECT_EQ(none[i], 0.0);
    }
}

TEST(NormalForces, NonIncreasingWithRing) {
    const auto g = build_geometry();
    for (double depth = 0.0; depth <= 5.0; depth += 0.1) {
        const auto n = normal_forces(g, depth, 1.3);
        for (std::size_t i = 0; i < n.size(); ++i) {
            for (std::size_t j = 0; j < n.size(); ++j) {
                if (g.papillae[i].ring < g.papillae[j].ring) EXPECT_GE(n[i], n[j]);
            }
        }
    }
}

TEST(Dynamics, OutermostContactingRingBreaksAwayFirst) {
    const auto g = build_geometry();
    MechanicsParams mech;
    std::vector<PapillaState> state(g.papillae.size());
    std::optional<std::size_t> first;
    for (int k = 0; k < 200000 && !first; ++k) {
        const auto out = step_dynamics(state, g, mech, 1e-4, {1.0, 0.0}, 3.4);
        for (std::size_t i = 0; i < state.size(); ++i) {
            if (out.started_slip[i]) {
                first = i;
                break;
            }
        }
    }
    ASSERT_TRUE(first);
    EXPECT_EQ(g.papillae[*first].ring, 3u);
}

TEST(Dynamics, ZeroDriveIsAFixedPoint) {
    const auto g = build_geometry();
    MechanicsParams mech;
    std::vector<PapillaState> state(g.papillae.size());
    step_dynamics(state, g, mech, 1e-4, {0.0, 0.0}, 3.0); // settle contact
    const auto before = state;
    for (int k = 0; k < 100; ++k) step_dynamics(state, g, mech, 1e-4, {0.0, 0.0}, 3.0);
    for (std::size_t i = 0; i < state.size(); ++i) {
        EXPECT_EQ(state[i].deflection_mm.x, before[i].deflection_mm.x);
        EXPECT_EQ(state[i].deflection_mm.y, before[i].deflection_mm.y);
        EXPECT_EQ(state[i].mode, before[i].mode);
    }
}

TEST(Dynamics, SteadySlidingHasConstantDeflection) {
    const auto g = build_geometry();
    MechanicsParams mech;
    std::vector<PapillaState> state(g.papillae.size());
    for (int k = 0; k < 300000; ++k) step_dynamics(state, g, mech, 1e-4, {1.0, 0.0}, 3.0);
    for (const auto& s : state) {
        if (s.in_contact) EXPECT_EQ(s.mode, Mode::Slip);
    }
    const auto before = state;
    step_dynamics(state, g, mech, 1e-4, {1.0, 0.0}, 3.0);
    for (std::size_t i = 0; i < state.size(); ++i) {
        if (!state[i].in_contact) continue;
        const double rate = (state[i].deflection_mm - before[i].deflection_mm).norm() / 1e-4;
        EXPECT_LT(rate, 1e-6);
    }
}

TEST(Events, NoBackgroundAndStationaryGivesEmptyStream) {
    const auto g = build_geometry();
    const auto traj = blank_trajectory(g.papillae.size(), 5000);
    EventModel model;
    model.lambda_bg = 0.0;
    EXPECT_TRUE(generate_events(traj, g, model, 7).events.empty());
}

TEST(Events, DoublingAlphaDoublesMeanCount) {
    const auto g = build_geometry();
    auto traj = blank_trajectory(g.papillae.size(), 1000);
    for (std::size_t k = 0; k < traj.steps; ++k) traj.deform_speed[traj.at(k, 5)] = 1.0f; // 0.1 mm over 0.1 s
    EventModel model;
    model.lambda_bg = 0.0;
    double sum1 = 0.0, sum2 = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        sum1 += static_cast<double>(generate_events(traj, g, model, seed).events.size());
        EventModel twice = model;
        twice.alpha *= 2.0;
        sum2 += static_cast<double>(generate_events(traj, g, twice, seed).events.size());
    }
    EXPECT_NEAR(sum1 / 100.0, model.alpha * 0.1, 0.1 * model.alpha * 0.1);
    EXPECT_NEAR(sum2 / sum1, 2.0, 0.1);
}

TEST(Events, FootprintStaysOnThePapilla) {
    const auto g = build_geometry();
    auto traj = blank_trajectory(g.papillae.size(), 1000);
    for (std::size_t k = 0; k < traj.steps; ++k) traj.deform_speed[traj.at(k, 0)] = 5.0f;
    EventModel model;
    model.lambda_bg = 0.0;
    const auto s = generate_events(traj, g, model, 3);
    ASSERT_FALSE(s.events.empty());
    for (const auto& e : s.events) {
        const double dx = e.x + 0.5 - 320.0, dy = e.y + 0.5 - 240.0;
        EXPECT_LE(std::hypot(dx, dy), model.r_px + 1.5);
    }
    EXPECT_TRUE(validate_stream(s).empty());
}

TEST(Onsets, OnlyOuterRingSlippingHasNoGross) {
    const auto g = build_geometry();
    auto traj = blank_trajectory(g.papillae.size(), 100);
    for (std::size_t i = 0; i < g.papillae.size(); ++i) {
        for (std::size_t k = 0; k < traj.steps; ++k) {
            traj.contact[traj.at(k, i)] = 1;
            if (g.papillae[i].ring == 3 && k >= 40) traj.tip_displacement[traj.at(k, i)] = k >= 50 ? 0.2f : 0.05f;
            if (g.papillae[i].ring == 2) traj.tip_displacement[traj.at(k, i)] = 0.1f * 0.99f;
        }
    }
    const auto o = ground_truth_onsets(traj, g, 0.1);
    ASSERT_TRUE(o.incipient_us);
    EXPECT_EQ(*o.incipient_us, traj.step_end_us(50));
    EXPECT_FALSE(o.gross_us);
}

TEST(Onsets, NoSlipThrows) {
    const auto g = build_geometry();
    const auto traj = blank_trajectory(g.papillae.size(), 10);
    try {
        ground_truth_onsets(traj, g, 0.1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NoSlipOccurred);
    }
}

TEST(Onsets, ZeroThresholdMatchesFirstSlip) {
    SimParams params;
    params.protocol.slip_threshold_mm = 0.0;
    const auto res = simulate(kinematic(3.0, 1.0, 0.0, 5), params);
    std::optional<std::uint64_t> first;
    for (const auto& t : res.ring_first_slip_us) {
        if (t && (!first || *t < *first)) first = t;
    }
    ASSERT_TRUE(first);
    EXPECT_EQ(res.onsets.incipient_us, first);
}

TEST(Scenario, KinematicTrialShape) {
    const Trial t = run_scenario(kinematic(3.0, 1.0, 0.0, 9));
    ASSERT_TRUE(t.incipient_onset_us);
    ASSERT_TRUE(t.gross_onset_us);
    EXPECT_LT(*t.incipient_onset_us, *t.gross_onset_us);
    // press (0.6 s) + hold (0.5 s) + 15 s of travel
    EXPECT_NEAR(static_cast<double>(t.end_us()) * 1e-6, 16.1, 0.1);
    EXPECT_TRUE(validate_stream(t.stream).empty());
}

TEST(Scenario, KinematicInvariantsOverSeeds) {
    std::size_t signature = 0;
    const std::size_t n = 8;
    for (std::uint64_t seed = 0; seed < n; ++seed) {
        const auto c = kinematic(2.8 + 0.2 * (seed % 3), 1.0, 45.0 * seed, 100 + seed);
        const auto res = simulate(c);
        const auto& rings = res.ring_first_slip_us;
        for (std::size_t r = 1; r < kRings; ++r) {
            if (rings[r] && rings[r - 1]) EXPECT_GE(*rings[r - 1], *rings[r]) << "seed " << seed << " ring " << r;
        }
        const Trial t = run_scenario(c);
        ASSERT_TRUE(t.gross_onset_us);
        EXPECT_LT(*t.incipient_onset_us, *t.gross_onset_us);
        const std::uint64_t inc = *t.incipient_onset_us, gross = *t.gross_onset_us;
        signature += count_in(t.stream, inc - 200000, inc) > count_in(t.stream, gross + 500000, gross + 700000);
    }
    EXPECT_EQ(signature, n);
}

TEST(Scenario, GravityHasIncipientThenGross) {
    ScenarioConfig c;
    c.kind = ScenarioKind::Gravity;
    c.seed = 4;
    const Trial t = run_scenario(c);
    ASSERT_TRUE(t.incipient_onset_us);
    ASSERT_TRUE(t.gross_onset_us);
    EXPECT_LT(*t.incipient_onset_us, *t.gross_onset_us);
}

TEST(Scenario, Deterministic) {
    ScenarioConfig c;
    c.kind = ScenarioKind::Gravity;
    c.disturbance_fraction = 0.5;
    c.seed = 77;
    EXPECT_EQ(encode_events(run_scenario(c)), encode_events(run_scenario(c)));
}

TEST(Scenario, LeftRightDisturbanceIsMirrorSymmetric) {
    ScenarioConfig right;
    right.kind = ScenarioKind::Gravity;
    right.disturbance_fraction = 1.0;
    right.disturbance_side = Side::Right;
    right.seed = 12;
    ScenarioConfig left = right;
    left.disturbance_side = Side::Left;
    const Trial r = run_scenario(right);
    const Trial l = run_scenario(left);
    EXPECT_EQ(r.incipient_onset_us, l.incipient_onset_us);
    EXPECT_EQ(r.gross_onset_us, l.gross_onset_us);
    auto key = [](const Event& e) { return std::tuple(e.t_us, e.x, e.y, e.polarity); };
    std::vector<std::tuple<std::uint64_t, std::uint16_t, std::uint16_t, std::int8_t>> a, b;
    for (const auto& e : r.stream.events) a.push_back(key(e));
    for (auto e : l.stream.events) {
        e.x = static_cast<std::uint16_t>(kSensorWidth - 1 - e.x);
        b.push_back(key(e));
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    ASSERT_FALSE(a.empty());
    EXPECT_EQ(a, b);
}

TEST(Scenario, OffGridWithoutFlagIsRejected) {
    EXPECT_THROW(run_scenario(kinematic(2.5, 1.0, 0.0, 1)), Error);
}
