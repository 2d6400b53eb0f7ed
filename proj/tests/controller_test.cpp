#include <gtest/gtest.h>

#include "m2da/controller.hpp"

using namespace m2da;

namespace {

// Independent brute-force oracle: grid-search v1 over [0, v_max] and take the
// largest feasible value under the raw constraint set.
std::pair<double, double> safe_speed_brute(const SafetyEnvelope& env, double step = 1e-3) {
    double best_v1 = -1.0;
    for (double v1 = 0.0; v1 <= env.v_max + 1e-12; v1 += step) {
        double v2 = std::max(0.0, v1 - env.a_max * env.t);
        bool ok = true;
        if (std::abs(v1 - env.v0) > env.a_max * env.t + 1e-12) ok = false;
        if (std::abs(v2 - v1) > env.a_max * env.t + 1e-12) ok = false;
        if ((env.v0 + v1) / 2.0 * env.t > env.s1 + 1e-12) ok = false;
        if ((env.v0 + v1) / 2.0 * env.t + (v1 + v2) / 2.0 * env.t > env.s2 + 1e-12) ok = false;
        if (ok) best_v1 = v1;
    }
    if (best_v1 < 0.0) return {0.0, 0.0};
    return {best_v1, std::max(0.0, best_v1 - env.a_max * env.t)};
}

SafetyEnvelope env_of(double v0, double s1, double s2) {
    SafetyEnvelope e;
    e.v0 = v0;
    e.s1 = s1;
    e.s2 = s2;
    return e;
}

}  // namespace

TEST(SafeSpeed, DocumentedExamples) {
    // from rest with ample clearance: can only accelerate to a_max * t
    EXPECT_NEAR(safe_speed(env_of(0.0, 1000.0, 1000.0)).first, 0.5, 1e-12);
    // cruising at 2 m/s with 1 m / 2 m of clearance
    EXPECT_NEAR(safe_speed(env_of(2.0, 1.0, 2.0)).first, 2.0, 1e-12);
    // infeasible: emergency stop
    auto stop = safe_speed(env_of(4.0, 0.5, 4.0));
    EXPECT_DOUBLE_EQ(stop.first, 0.0);
    EXPECT_DOUBLE_EQ(stop.second, 0.0);
}

TEST(SafeSpeed, BruteForceEquivalenceRandomEnvelopes) {
    Rng rng(17);
    for (int i = 0; i < 300; ++i) {
        SafetyEnvelope e = env_of(rng.uniform(0.0, 5.0), rng.uniform(0.0, 12.0),
                                  rng.uniform(0.0, 20.0));
        auto closed = safe_speed(e);
        auto brute = safe_speed_brute(e);
        EXPECT_NEAR(closed.first, brute.first, 2e-3) << "v0=" << e.v0 << " s1=" << e.s1
                                                     << " s2=" << e.s2;
        EXPECT_NEAR(closed.second, brute.second, 2e-3);
    }
}

TEST(SafeSpeed, ConstraintsSatisfiedBySubstitution) {
    Rng rng(18);
    for (int i = 0; i < 1000; ++i) {
        SafetyEnvelope e = env_of(rng.uniform(0.0, 5.0), rng.uniform(0.0, 12.0),
                                  rng.uniform(0.0, 20.0));
        auto [v1, v2] = safe_speed(e);
        if (v1 == 0.0 && v2 == 0.0) continue;  // emergency stop
        double at = e.a_max * e.t;
        EXPECT_LE(v1, e.v_max + 1e-9);
        EXPECT_GE(v1, 0.0);
        EXPECT_LE(std::abs(v1 - e.v0), at + 1e-9);
        EXPECT_LE(std::abs(v2 - v1), at + 1e-9);
        EXPECT_LE((e.v0 + v1) / 2.0 * e.t, e.s1 + 1e-9);
        EXPECT_LE((e.v0 + v1) / 2.0 * e.t + (v1 + v2) / 2.0 * e.t, e.s2 + 1e-9);
    }
}

TEST(SafeSpeed, MonotoneInClearance) {
    for (double v0 : {0.0, 1.5, 3.0, 5.0}) {
        double prev = -1.0;
        for (double s = 0.0; s <= 10.0; s += 0.25) {
            double v1 = safe_speed(env_of(v0, s, 2.0 * s)).first;
            EXPECT_GE(v1, prev - 1e-12);
            prev = v1;
        }
    }
}

TEST(ControlSignal, ValidationAndClamping) {
    ControlSignal c(2.0, 0.5, 0.0);
    EXPECT_DOUBLE_EQ(c.steer, 1.0);  // clamped
    EXPECT_THROW(ControlSignal(0.0, 0.5, 0.5), std::invalid_argument);
    ControlSignal ok(0.0, 0.0, 1.0);
    EXPECT_DOUBLE_EQ(ok.brake, 1.0);
}

TEST(CorridorClearance, ForecastAndFiltering) {
    Config cfg;
    std::vector<DetectedObject> objects;
    // stationary object dead ahead at 10 m: clearance = 10 - buffer_len/2
    objects.push_back({10.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0});
    EXPECT_NEAR(corridor_clearance(objects, 0.5, cfg), 10.0 - cfg.collision_buffer_len / 2.0, 1e-9);
    // far to the side: ignored
    objects.assign({{10.0, 8.0, 1.0, 1.0, 0.0, 0.0, 1.0}});
    EXPECT_DOUBLE_EQ(corridor_clearance(objects, 0.5, cfg), 1e6);
    // crossing pedestrian forecast into the corridor at the horizon
    DetectedObject ped{8.0, -2.4, 0.6, 0.6, 1.5, M_PI / 2.0, 1.0};
    EXPECT_DOUBLE_EQ(corridor_clearance({ped}, 0.5, cfg), 1e6);  // not yet in corridor
    double in_corr = corridor_clearance({ped}, 1.0, cfg);
    EXPECT_LT(in_corr, 1e6);
    EXPECT_NEAR(in_corr, 8.0 - cfg.collision_buffer_len / 2.0, 1e-9);
    // fully behind the ego: ignored
    objects.assign({{-6.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0}});
    EXPECT_DOUBLE_EQ(corridor_clearance(objects, 0.5, cfg), 1e6);
}

TEST(LateralPid, SteersTowardWaypoints) {
    Config cfg;
    PidState state;
    WaypointSequence right;
    right.points = {{1.0, 0.5}, {2.0, 1.0}, {3.0, 1.5}, {4.0, 2.0}};
    double steer_right = lateral_pid(right, state, cfg);
    EXPECT_GT(steer_right, 0.0);
    PidState state2;
    WaypointSequence left;
    left.points = {{1.0, -0.5}, {2.0, -1.0}, {3.0, -1.5}, {4.0, -2.0}};
    EXPECT_LT(lateral_pid(left, state2, cfg), 0.0);
    PidState state3;
    WaypointSequence straight;
    straight.points = {{1.0, 0.0}, {2.0, 0.0}, {3.0, 0.0}, {4.0, 0.0}};
    EXPECT_DOUBLE_EQ(lateral_pid(straight, state3, cfg), 0.0);
    WaypointSequence too_few;
    too_few.points = {{1.0, 0.0}};
    PidState state4;
    EXPECT_THROW(lateral_pid(too_few, state4, cfg), std::invalid_argument);
}

TEST(LongitudinalPid, ThrottleBrakeExclusive) {
    Config cfg;
    PidState state;
    auto [th, br] = longitudinal_pid(3.0, 0.0, state, cfg);
    EXPECT_GT(th, 0.0);
    EXPECT_DOUBLE_EQ(br, 0.0);
    PidState state2;
    auto [th2, br2] = longitudinal_pid(0.0, 3.0, state2, cfg);
    EXPECT_DOUBLE_EQ(th2, 0.0);
    EXPECT_GT(br2, 0.0);
}

TEST(Controller, RedLightForcesStop) {
    Config cfg;
    Controller ctrl(cfg);
    WaypointSequence wp;
    for (int i = 1; i <= 10; ++i)
        wp.points.push_back({1.25 * static_cast<double>(i), 0.0});
    TrafficState green;
    ControlSignal go = ctrl.control_step(wp, green, {}, 2.0);
    EXPECT_GT(go.throttle, 0.0);
    Controller ctrl2(cfg);
    TrafficState red;
    red.red_light = 0.9;
    ControlSignal stop = ctrl2.control_step(wp, red, {}, 2.0);
    EXPECT_DOUBLE_EQ(stop.throttle, 0.0);
    EXPECT_GT(stop.brake, 0.0);
}

TEST(Controller, EnvelopeLimitsSpeedNearObstacle) {
    Config cfg;
    Controller ctrl(cfg);
    WaypointSequence wp;
    for (int i = 1; i <= 10; ++i)
        wp.points.push_back({2.5 * static_cast<double>(i), 0.0});
    std::vector<DetectedObject> wall = {{2.5, 0.0, 2.0, 2.0, 0.0, 0.0, 1.0}};
    TrafficState green;
    ControlSignal c = ctrl.control_step(wp, green, wall, 4.0);
    EXPECT_DOUBLE_EQ(c.throttle, 0.0);
    EXPECT_GT(c.brake, 0.0);
}

TEST(Controller, WaypointImpliedSpeed) {
    Config cfg;
    Controller ctrl(cfg);
    WaypointSequence wp;
    wp.points = {{1.0, 0.0}, {2.0, 0.0}};
    EXPECT_NEAR(ctrl.waypoint_speed(wp), 2.0, 1e-12);  // (1 + 1) / (2 * 0.5)
    WaypointSequence fast;
    fast.points = {{10.0, 0.0}, {20.0, 0.0}};
    EXPECT_DOUBLE_EQ(ctrl.waypoint_speed(fast), cfg.v_max);  // capped
}
