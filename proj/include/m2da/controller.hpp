#pragma once

// Waypoints -> steer/throttle/brake via two PID controllers, bounded by the
// closed-form safety-heuristic speed program.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "m2da/config.hpp"
#include "m2da/decoder.hpp"

namespace m2da {

struct ControlSignal {
    double steer = 0.0;     // [-1, 1]
    double throttle = 0.0;  // [0, 1]
    double brake = 0.0;     // [0, 1]

    ControlSignal() = default;
    ControlSignal(double s, double t, double b)
        : steer(std::clamp(s, -1.0, 1.0)),
          throttle(std::clamp(t, 0.0, 1.0)),
          brake(std::clamp(b, 0.0, 1.0)) {
        if (throttle > 0.0 && brake > 0.0)
            throw std::invalid_argument("ControlSignal: throttle and brake are mutually exclusive");
    }
};

struct SafetyEnvelope {
    double v0 = 0.0;     // current speed, m/s
    double s1 = 0.0;     // max safe distance over the next 0.5 s, m
    double s2 = 0.0;     // max safe distance over the next 1.0 s, m
    double t = 0.5;      // s
    double a_max = 1.0;  // m/s^2
    double v_max = 5.0;  // m/s
};

// Maximize v1 subject to
//   (v0 + v1) t <= 2 s1
//   (v0 + v1) t + (v1 + v2) t <= 2 s2
//   |v1 - v0| / t <= a_max,  |v2 - v1| / t <= a_max
//   v1, v2 in [0, v_max]
// with v2 = max(0, v1 - a_max t) (the least demanding follow-up speed).
// Infeasible envelopes return the (0, 0) emergency stop.
inline std::pair<double, double> safe_speed(const SafetyEnvelope& env) {
    const double at = env.a_max * env.t;
    double ub = std::min({2.0 * env.s1 / env.t - env.v0, env.v0 + at, env.v_max});
    // s2 bound: v0 + 2 v1 + max(0, v1 - a_max t) <= 2 s2 / t, increasing in v1
    double rhs = 2.0 * env.s2 / env.t - env.v0;
    double v1_s2 = (env.v0 + 2.0 * at <= 2.0 * env.s2 / env.t) ? (rhs + at) / 3.0 : rhs / 2.0;
    ub = std::min(ub, v1_s2);
    double lb = std::max(0.0, env.v0 - at);
    if (ub < lb) return {0.0, 0.0};
    double v1 = ub;
    double v2 = std::max(0.0, v1 - at);
    return {v1, v2};
}

struct PidState {
    double integral = 0.0;
    double prev_error = 0.0;
    bool has_prev = false;

    double step(double error, double kp, double ki, double kd, double dt, double integral_cap) {
        integral = std::clamp(integral + error * dt, -integral_cap, integral_cap);
        double deriv = has_prev ? (error - prev_error) / dt : 0.0;
        prev_error = error;
        has_prev = true;
        return kp * error + ki * integral + kd * deriv;
    }
};

// Heading error toward the mean of waypoints 1-3; output clamped to [-1, 1].
inline double lateral_pid(const WaypointSequence& waypoints, PidState& state,
                          const Config& cfg = Config{}) {
    if (waypoints.size() < 2) throw std::invalid_argument("lateral_pid: at least 2 waypoints required");
    double mx = 0.0, my = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 1; i <= 3 && i < waypoints.size(); ++i) {
        mx += waypoints.points[i][0];
        my += waypoints.points[i][1];
        ++n;
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double error = (mx == 0.0 && my == 0.0) ? 0.0 : std::atan2(my, mx);
    double out = state.step(error, cfg.lat_kp, cfg.lat_ki, cfg.lat_kd, cfg.pid_dt,
                            cfg.lat_integral_cap);
    return std::clamp(out, -1.0, 1.0);
}

// PID on the speed error; positive output drives the throttle, negative the
// brake. Mutual exclusivity holds by construction.
inline std::pair<double, double> longitudinal_pid(double target_speed, double current_speed,
                                                  PidState& state, const Config& cfg = Config{}) {
    if (target_speed < 0.0 || current_speed < 0.0)
        throw std::invalid_argument("longitudinal_pid: speeds must be nonnegative");
    double out = state.step(target_speed - current_speed, cfg.lon_kp, cfg.lon_ki, cfg.lon_kd,
                            cfg.pid_dt, cfg.lat_integral_cap);
    if (out > 0.0) return {std::clamp(out, 0.0, 1.0), 0.0};
    return {0.0, std::clamp(-out, 0.0, 1.0)};
}

// Distance (along the forward corridor) to the nearest object footprint at a
// constant-speed forecast horizon, minus half the collision buffer length.
inline double corridor_clearance(const std::vector<DetectedObject>& objects, double horizon,
                                 const Config& cfg) {
    double clearance = 1e6;
    double corridor_half = cfg.collision_buffer_wid / 2.0;
    for (const auto& o : objects) {
        double fx = o.x + o.speed * std::cos(o.yaw) * horizon;
        double fy = o.y + o.speed * std::sin(o.yaw) * horizon;
        double half_extent = std::max(o.width, o.length) / 2.0;
        if (std::abs(fy) > corridor_half + half_extent) continue;
        if (fx + half_extent < 0.0) continue;  // fully behind
        double gap = fx - cfg.collision_buffer_len / 2.0;
        clearance = std::min(clearance, std::max(0.0, gap));
    }
    return clearance;
}

class Controller {
public:
    explicit Controller(const Config& cfg = Config{}) : cfg_(cfg) {}

    // Waypoint-implied speed limited by the safety envelope; a red light with
    // probability above 0.5 forces a stop.
    ControlSignal control_step(const WaypointSequence& waypoints, const TrafficState& traffic,
                               const std::vector<DetectedObject>& objects, double current_speed) {
        SafetyEnvelope env;
        env.v0 = current_speed;
        env.t = cfg_.envelope_dt;
        env.a_max = cfg_.a_max;
        env.v_max = cfg_.v_max;
        env.s1 = corridor_clearance(objects, cfg_.envelope_dt, cfg_);
        env.s2 = corridor_clearance(objects, 2.0 * cfg_.envelope_dt, cfg_);
        auto [v1, v2] = safe_speed(env);
        (void)v2;

        double target = std::min(waypoint_speed(waypoints), v1);
        if (traffic.red_light > 0.5) target = 0.0;

        double steer = lateral_pid(waypoints, lat_state_, cfg_);
        auto [throttle, brake] = longitudinal_pid(target, current_speed, lon_state_, cfg_);
        return ControlSignal(steer, throttle, brake);
    }

    void reset() {
        lat_state_ = PidState{};
        lon_state_ = PidState{};
    }

    // Mean of the first two waypoint segment lengths over the tick period,
    // capped at v_max.
    double waypoint_speed(const WaypointSequence& w) const {
        if (w.size() < 2) return 0.0;
        double seg0 = std::hypot(w.points[0][0], w.points[0][1]);
        double seg1 = std::hypot(w.points[1][0] - w.points[0][0], w.points[1][1] - w.points[0][1]);
        double v = (seg0 + seg1) / (2.0 * cfg_.sim_dt);
        return std::min(v, cfg_.v_max);
    }

private:
    Config cfg_;
    PidState lat_state_;
    PidState lon_state_;
};

}  // namespace m2da
