#pragma once

// Deterministic kinematic micro-simulator: scripted routes, agents and
// traffic lights; a rule-based expert; closed-loop evaluation producing
// RC / IS / DS with CARLA-leaderboard-style infraction accounting.

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "m2da/bev.hpp"
#include "m2da/config.hpp"
#include "m2da/controller.hpp"
#include "m2da/decoder.hpp"

namespace m2da {

struct Pose {
    double x = 0.0, y = 0.0, yaw = 0.0;  // world frame, yaw CCW from +x
};

// World -> ego transform. Ego frame: x forward, y right (matching the BEV).
inline void world_to_ego(const Pose& ego, double wx, double wy, double& ex, double& ey) {
    double dx = wx - ego.x, dy = wy - ego.y;
    ex = std::cos(ego.yaw) * dx + std::sin(ego.yaw) * dy;
    ey = std::sin(ego.yaw) * dx - std::cos(ego.yaw) * dy;
}

inline double world_yaw_to_ego(const Pose& ego, double wyaw) {
    return wrap_angle(-(wyaw - ego.yaw));
}

enum class AgentType { Vehicle, Pedestrian, Static };

struct Agent {
    AgentType type = AgentType::Vehicle;
    Pose pose;
    double speed = 0.0;                       // scripted speed along path
    double width = 1.8, length = 4.0;
    std::vector<std::array<double, 2>> path;  // scripted polyline; empty = static
    double path_progress = 0.0;               // arc length along path
    double start_time = 0.0;                  // seconds before the agent starts moving
    bool collided = false;                    // debounce flag
    std::deque<std::array<double, 2>> history;  // last positions (sliding window)
};

struct TrafficLight {
    double stop_arc = 0.0;     // arc length of the stop line along the route
    double green_s = 30.0;
    double red_s = 10.0;
    double phase_s = 0.0;      // cycle offset

    bool is_red(double time_s) const {
        double cycle = green_s + red_s;
        double t = std::fmod(time_s + phase_s, cycle);
        return t >= green_s;
    }
};

struct RouteSpec {
    std::string name;
    int town = 0;
    std::vector<std::array<double, 2>> polyline;   // >= 2 points, ~1 m spacing
    std::vector<std::array<double, 2>> targets;    // sparse GPS target locations
    std::vector<TrafficLight> lights;
    std::vector<Agent> agents;                      // initial agent states
    double length = 0.0;

    double nominal_time_s(const Config& cfg) const { return length / (0.5 * cfg.v_max); }
    std::size_t timeout_ticks(const Config& cfg) const {
        return static_cast<std::size_t>(std::ceil(cfg.sim_timeout_factor * nominal_time_s(cfg) / cfg.sim_dt));
    }
};

struct InfractionCounts {
    std::size_t ped = 0, veh = 0, stat = 0, red = 0, timeout = 0, block = 0;
};

struct Scene {
    RouteSpec route;
    Pose ego;
    double ego_speed = 0.0;
    std::vector<Agent> agents;
    std::size_t tick = 0;
    std::uint64_t seed = 0;
    double progress = 0.0;        // monotone arc-length progress along the route
    double prev_progress = 0.0;
    InfractionCounts infractions;
    std::size_t blocked_ticks = 0;
    double route_deviation = 0.0;  // lateral distance to the route polyline
    bool done = false;

    double time_s(const Config& cfg) const { return static_cast<double>(tick) * cfg.sim_dt; }
};

// --- Route geometry helpers -------------------------------------------------

inline double polyline_length(const std::vector<std::array<double, 2>>& pts) {
    double total = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i)
        total += std::hypot(pts[i][0] - pts[i - 1][0], pts[i][1] - pts[i - 1][1]);
    return total;
}

// Point and tangent at a given arc length.
inline void polyline_at(const std::vector<std::array<double, 2>>& pts, double arc, double& x,
                        double& y, double& yaw) {
    if (pts.size() < 2) throw std::invalid_argument("polyline_at: need >= 2 points");
    double s = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        double dx = pts[i][0] - pts[i - 1][0], dy = pts[i][1] - pts[i - 1][1];
        double seg = std::hypot(dx, dy);
        if (arc <= s + seg || i + 1 == pts.size()) {
            double u = seg > 0.0 ? std::clamp((arc - s) / seg, 0.0, 1.0) : 0.0;
            x = pts[i - 1][0] + u * dx;
            y = pts[i - 1][1] + u * dy;
            yaw = std::atan2(dy, dx);
            return;
        }
        s += seg;
    }
}

// Arc length of the closest polyline point (projection). If dist_out is
// given, receives the distance to that closest point.
inline double polyline_project(const std::vector<std::array<double, 2>>& pts, double px, double py,
                               double* dist_out = nullptr) {
    double best_d = 1e18, best_arc = 0.0, s = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        double ax = pts[i - 1][0], ay = pts[i - 1][1];
        double bx = pts[i][0], by = pts[i][1];
        double dx = bx - ax, dy = by - ay;
        double seg2 = dx * dx + dy * dy;
        double u = seg2 > 0.0 ? std::clamp(((px - ax) * dx + (py - ay) * dy) / seg2, 0.0, 1.0) : 0.0;
        double cx = ax + u * dx, cy = ay + u * dy;
        double d = std::hypot(px - cx, py - cy);
        double seg = std::sqrt(seg2);
        if (d < best_d) {
            best_d = d;
            best_arc = s + u * seg;
        }
        s += seg;
    }
    if (dist_out) *dist_out = best_d;
    return best_arc;
}

// --- Collision geometry (separating axis test on oriented rectangles) -------

inline bool boxes_overlap(const Pose& a, double alen, double awid, const Pose& b, double blen,
                          double bwid) {
    auto corners = [](const Pose& p, double len, double wid) {
        std::array<std::array<double, 2>, 4> cs;
        double c = std::cos(p.yaw), s = std::sin(p.yaw);
        double hl = len / 2.0, hw = wid / 2.0;
        int k = 0;
        for (double sx : {-1.0, 1.0})
            for (double sy : {-1.0, 1.0}) {
                cs[k][0] = p.x + sx * hl * c - sy * hw * s;
                cs[k][1] = p.y + sx * hl * s + sy * hw * c;
                ++k;
            }
        return cs;
    };
    auto ca = corners(a, alen, awid), cb = corners(b, blen, bwid);
    auto separated = [](const std::array<std::array<double, 2>, 4>& p,
                        const std::array<std::array<double, 2>, 4>& q, double ax, double ay) {
        double pmin = 1e18, pmax = -1e18, qmin = 1e18, qmax = -1e18;
        for (auto& c : p) {
            double d = c[0] * ax + c[1] * ay;
            pmin = std::min(pmin, d);
            pmax = std::max(pmax, d);
        }
        for (auto& c : q) {
            double d = c[0] * ax + c[1] * ay;
            qmin = std::min(qmin, d);
            qmax = std::max(qmax, d);
        }
        return pmax < qmin || qmax < pmin;
    };
    for (const Pose* p : {&a, &b}) {
        double c = std::cos(p->yaw), s = std::sin(p->yaw);
        if (separated(ca, cb, c, s) || separated(ca, cb, -s, c)) return false;
    }
    return true;
}

// --- Simulation step ---------------------------------------------------------

inline Scene make_scene(const RouteSpec& route, std::uint64_t seed, const Config& cfg) {
    Scene scene;
    scene.route = route;
    scene.seed = seed;
    double x, y, yaw;
    polyline_at(route.polyline, 0.0, x, y, yaw);
    scene.ego = {x, y, yaw};
    scene.agents = route.agents;
    // the seed staggers traffic light phases deterministically
    Rng rng(seed);
    for (auto& l : scene.route.lights) l.phase_s = std::floor(rng.uniform(0.0, l.green_s) * 2.0) / 2.0;
    (void)cfg;
    return scene;
}

// Kinematic bicycle update for the ego, scripted agent advance, collision and
// red-light infraction detection. Deterministic given the scene state.
inline void step(Scene& scene, const ControlSignal& control, const Config& cfg) {
    double dt = cfg.sim_dt;
    double accel = control.throttle * cfg.sim_throttle_accel - control.brake * cfg.sim_brake_decel -
                   cfg.sim_drag * scene.ego_speed;
    double old_progress = scene.progress;
    scene.ego_speed = std::clamp(scene.ego_speed + accel * dt, 0.0, 2.0 * cfg.v_max);
    // positive steer turns right (clockwise in a CCW world yaw convention)
    double yaw_rate = -(scene.ego_speed / cfg.sim_wheelbase) * std::tan(control.steer * cfg.sim_max_steer_rad);
    scene.ego.yaw = wrap_angle(scene.ego.yaw + yaw_rate * dt);
    scene.ego.x += scene.ego_speed * std::cos(scene.ego.yaw) * dt;
    scene.ego.y += scene.ego_speed * std::sin(scene.ego.yaw) * dt;

    double now = scene.time_s(cfg) + dt;
    for (auto& a : scene.agents) {
        a.history.push_back({a.pose.x, a.pose.y});
        while (a.history.size() > 3) a.history.pop_front();
        if (a.path.size() >= 2 && a.speed > 0.0 && now >= a.start_time) {
            a.path_progress += a.speed * dt;
            double len = polyline_length(a.path);
            a.path_progress = std::min(a.path_progress, len);
            polyline_at(a.path, a.path_progress, a.pose.x, a.pose.y, a.pose.yaw);
        }
    }

    // route progress is monotone nondecreasing
    scene.prev_progress = old_progress;
    double deviation = 0.0;
    double arc = polyline_project(scene.route.polyline, scene.ego.x, scene.ego.y, &deviation);
    scene.progress = std::max(scene.progress, arc);
    scene.route_deviation = deviation;

    // collisions (one infraction per agent)
    for (auto& a : scene.agents) {
        if (a.collided) continue;
        if (boxes_overlap(scene.ego, cfg.collision_buffer_len, cfg.collision_buffer_wid, a.pose,
                          a.length, a.width)) {
            a.collided = true;
            switch (a.type) {
                case AgentType::Pedestrian: ++scene.infractions.ped; break;
                case AgentType::Vehicle: ++scene.infractions.veh; break;
                case AgentType::Static: ++scene.infractions.stat; break;
            }
        }
    }

    // red-light crossing: stop line arc passed while the light is red
    for (const auto& l : scene.route.lights) {
        if (old_progress < l.stop_arc && scene.progress >= l.stop_arc && l.is_red(now))
            ++scene.infractions.red;
    }

    if (scene.ego_speed < cfg.sim_block_speed) ++scene.blocked_ticks;
    else scene.blocked_ticks = 0;

    ++scene.tick;
}

// --- Ground truth views of the scene -----------------------------------------

// Agents in the ego frame; speed via the 3-frame sliding window when history
// is available, heading from displacement.
inline std::vector<DetectedObject> gt_objects(const Scene& scene, const Config& cfg) {
    std::vector<DetectedObject> out;
    for (const auto& a : scene.agents) {
        DetectedObject o;
        world_to_ego(scene.ego, a.pose.x, a.pose.y, o.x, o.y);
        if (o.x < -cfg.bev_extent_rear || o.x > cfg.bev_extent_front ||
            std::abs(o.y) > cfg.bev_extent_side)
            continue;
        o.width = a.width;
        o.length = a.length;
        double wyaw = a.pose.yaw, wspeed = a.speed;
        if (a.history.size() >= 3) {
            double dx = a.pose.x - a.history.front()[0];
            double dy = a.pose.y - a.history.front()[1];
            double dist = std::hypot(dx, dy);
            wspeed = dist / (static_cast<double>(a.history.size() - 1) * cfg.sim_dt);
            if (dist > 1e-6) wyaw = std::atan2(dy, dx);
        }
        if (a.path.size() < 2 || scene.time_s(cfg) < a.start_time) wspeed = 0.0;
        o.speed = wspeed;
        o.yaw = world_yaw_to_ego(scene.ego, wyaw);
        out.push_back(o);
    }
    return out;
}

// Red-light flag is raised only within the approach zone ahead of an
// uncrossed stop line.
inline TrafficState gt_traffic(const Scene& scene, const Config& cfg) {
    TrafficState t;
    for (const auto& l : scene.route.lights) {
        double dist = l.stop_arc - scene.progress;
        if (dist > 0.0 && dist < 15.0) {
            t.intersection = 1.0;
            if (l.is_red(scene.time_s(cfg))) t.red_light = 1.0;
        }
    }
    return t;
}

// Next sparse target in the ego frame, in meters.
inline std::array<double, 2> gt_target(const Scene& scene) {
    for (const auto& tgt : scene.route.targets) {
        double arc = polyline_project(scene.route.polyline, tgt[0], tgt[1]);
        if (arc > scene.progress + 1.0) {
            double ex, ey;
            world_to_ego(scene.ego, tgt[0], tgt[1], ex, ey);
            return {ex, ey};
        }
    }
    const auto& last = scene.route.polyline.back();
    double ex, ey;
    world_to_ego(scene.ego, last[0], last[1], ex, ey);
    return {ex, ey};
}

// --- Expert ------------------------------------------------------------------

struct PolicyOutput {
    WaypointSequence waypoints;
    TrafficState traffic;
    std::vector<DetectedObject> objects;
};

using Policy = std::function<PolicyOutput(const Scene&)>;
using PolicyFactory = std::function<Policy()>;

// Pure pursuit along the route at a safe_speed-limited plan speed; waypoints
// clamp at the stop line when a relevant light is red.
inline PolicyOutput expert_policy(const Scene& scene, const Config& cfg) {
    double off_route = 0.0;
    {
        double x, y, yaw;
        polyline_at(scene.route.polyline, scene.progress, x, y, yaw);
        off_route = std::hypot(scene.ego.x - x, scene.ego.y - y);
    }
    if (off_route > 6.0) throw std::runtime_error("expert_policy: route lost");

    PolicyOutput out;
    out.objects = gt_objects(scene, cfg);
    out.traffic = gt_traffic(scene, cfg);

    SafetyEnvelope env;
    env.v0 = scene.ego_speed;
    env.t = cfg.envelope_dt;
    env.a_max = cfg.a_max;
    env.v_max = cfg.v_max;
    env.s1 = corridor_clearance(out.objects, cfg.envelope_dt, cfg);
    env.s2 = corridor_clearance(out.objects, 2.0 * cfg.envelope_dt, cfg);
    double v_plan = std::min(safe_speed(env).first, 0.5 * cfg.v_max);

    double arc_limit = scene.route.length + 10.0;
    if (out.traffic.red_light > 0.5) {
        for (const auto& l : scene.route.lights)
            if (l.stop_arc > scene.progress && l.is_red(scene.time_s(cfg)))
                arc_limit = std::min(arc_limit, l.stop_arc - 2.0);
    }

    double arc = scene.progress;
    for (std::size_t t_i = 0; t_i < cfg.waypoint_count; ++t_i) {
        arc = std::min(arc + v_plan * cfg.sim_dt, arc_limit);
        double x, y, yaw;
        polyline_at(scene.route.polyline, std::min(arc, scene.route.length), x, y, yaw);
        double ex, ey;
        world_to_ego(scene.ego, x, y, ex, ey);
        out.waypoints.points.push_back({ex, ey});
    }
    return out;
}

// --- Scoring -----------------------------------------------------------------

struct RouteResult {
    std::string route_name;
    double rc = 0.0;   // percent
    double is = 1.0;   // [0, 1]
    double ds = 0.0;   // rc * is
    InfractionCounts counts;
    double length_m = 0.0;
    double driven_m = 0.0;
    std::size_t ticks = 0;

    double per_km(std::size_t count) const {
        double km = std::max(driven_m, 1.0) / 1000.0;
        return static_cast<double>(count) / km;
    }
};

inline RouteResult score_route(const std::string& name, double rc,
                               const InfractionCounts& counts, double length_m, double driven_m,
                               std::size_t ticks, const Config& cfg) {
    RouteResult r;
    r.route_name = name;
    r.rc = rc;
    r.counts = counts;
    r.length_m = length_m;
    r.driven_m = driven_m;
    r.ticks = ticks;
    r.is = 1.0;
    for (std::size_t i = 0; i < counts.ped; ++i) r.is *= cfg.penalty_ped;
    for (std::size_t i = 0; i < counts.veh; ++i) r.is *= cfg.penalty_veh;
    for (std::size_t i = 0; i < counts.stat; ++i) r.is *= cfg.penalty_stat;
    for (std::size_t i = 0; i < counts.red; ++i) r.is *= cfg.penalty_red;
    r.ds = r.rc * r.is;
    return r;
}

// Closed loop until route end, timeout, or block. Policy exceptions abort the
// route with RC frozen at the failure point.
inline RouteResult run_route(const Policy& policy, const RouteSpec& route, std::uint64_t seed,
                             const Config& cfg) {
    Scene scene = make_scene(route, seed, cfg);
    Controller controller(cfg);
    std::size_t timeout = route.timeout_ticks(cfg);
    std::size_t block_ticks = static_cast<std::size_t>(cfg.sim_block_seconds / cfg.sim_dt);
    bool completed = false;

    while (scene.tick < timeout) {
        PolicyOutput out;
        try {
            out = policy(scene);
        } catch (const std::exception&) {
            break;  // abort with RC at failure point
        }
        ControlSignal control;
        try {
            control = controller.control_step(out.waypoints, out.traffic, out.objects,
                                              scene.ego_speed);
        } catch (const std::exception&) {
            break;
        }
        step(scene, control, cfg);
        if (scene.progress >= route.length - 0.5) {
            completed = true;
            break;
        }
        if (scene.blocked_ticks >= block_ticks) {
            ++scene.infractions.block;
            break;
        }
        // leaving the drivable corridor ends the run with RC frozen
        if (scene.route_deviation > cfg.sim_offroute_abort_m) break;
    }
    if (!completed && scene.tick >= timeout) ++scene.infractions.timeout;

    double rc = completed ? 100.0 : 100.0 * std::clamp(scene.progress / route.length, 0.0, 1.0);
    return score_route(route.name, rc, scene.infractions, route.length, scene.progress,
                       scene.tick, cfg);
}

// --- Benchmark aggregation ----------------------------------------------------

struct BenchmarkReport {
    std::vector<std::vector<RouteResult>> per_route;  // [route][repeat]
    std::vector<std::string> route_names;
    double mean_rc = 0.0, mean_is = 0.0, mean_ds = 0.0;
    double std_rc = 0.0, std_is = 0.0, std_ds = 0.0;
};

// Repeats each route evaluation (default 3) and reports means. Deterministic
// policies with fixed seeds produce zero std.
inline BenchmarkReport evaluate_benchmark(const PolicyFactory& make_policy,
                                          const std::vector<RouteSpec>& routes,
                                          std::size_t repeats, std::uint64_t base_seed,
                                          const Config& cfg) {
    if (routes.empty()) throw std::invalid_argument("evaluate_benchmark: empty route set");
    BenchmarkReport rep;
    std::vector<double> rc_means, is_means, ds_means;
    for (const auto& route : routes) {
        rep.route_names.push_back(route.name);
        std::vector<RouteResult> runs;
        for (std::size_t r = 0; r < repeats; ++r) {
            Policy p = make_policy();
            runs.push_back(run_route(p, route, base_seed + r, cfg));
        }
        rep.per_route.push_back(runs);
    }
    // repeat means per metric, aggregated over repeats first, then routes
    std::vector<double> rep_rc(repeats, 0.0), rep_is(repeats, 0.0), rep_ds(repeats, 0.0);
    for (std::size_t r = 0; r < repeats; ++r) {
        for (const auto& runs : rep.per_route) {
            rep_rc[r] += runs[r].rc;
            rep_is[r] += runs[r].is;
            rep_ds[r] += runs[r].ds;
        }
        rep_rc[r] /= static_cast<double>(rep.per_route.size());
        rep_is[r] /= static_cast<double>(rep.per_route.size());
        rep_ds[r] /= static_cast<double>(rep.per_route.size());
    }
    auto mean_std = [&](const std::vector<double>& v, double& m, double& s) {
        m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        s = std::sqrt(s / static_cast<double>(v.size()));
    };
    mean_std(rep_rc, rep.mean_rc, rep.std_rc);
    mean_std(rep_is, rep.mean_is, rep.std_is);
    mean_std(rep_ds, rep.mean_ds, rep.std_ds);
    return rep;
}

// --- Built-in fixture routes ---------------------------------------------------

namespace detail {

inline std::vector<std::array<double, 2>> sample_arc(double cx, double cy, double radius,
                                                     double a0, double a1, double step_m) {
    std::vector<std::array<double, 2>> pts;
    double arc_len = std::abs(a1 - a0) * radius;
    std::size_t n = std::max<std::size_t>(2, static_cast<std::size_t>(arc_len / step_m));
    for (std::size_t i = 1; i <= n; ++i) {
        double a = a0 + (a1 - a0) * static_cast<double>(i) / static_cast<double>(n);
        pts.push_back({cx + radius * std::cos(a), cy + radius * std::sin(a)});
    }
    return pts;
}

inline void finalize_route(RouteSpec& r) {
    r.length = polyline_length(r.polyline);
    // sparse targets every ~25 m plus the endpoint
    r.targets.clear();
    for (double s = 25.0; s < r.length - 5.0; s += 25.0) {
        double x, y, yaw;
        polyline_at(r.polyline, s, x, y, yaw);
        r.targets.push_back({x, y});
    }
    r.targets.push_back(r.polyline.back());
}

inline Agent lead_vehicle(const RouteSpec& r, double start_arc, double speed) {
    Agent a;
    a.type = AgentType::Vehicle;
    a.speed = speed;
    a.path = r.polyline;
    // extend the path beyond the route end so the lead clears the goal area
    auto& p = a.path;
    std::size_t n = p.size();
    double dx = p[n - 1][0] - p[n - 2][0], dy = p[n - 1][1] - p[n - 2][1];
    double len = std::hypot(dx, dy);
    for (int i = 1; i <= 50; ++i)
        p.push_back({p[n - 1][0] + dx / len * static_cast<double>(i),
                     p[n - 1][1] + dy / len * static_cast<double>(i)});
    a.path_progress = start_arc;
    double x, y, yaw;
    polyline_at(a.path, start_arc, x, y, yaw);
    a.pose = {x, y, yaw};
    return a;
}

inline Agent crossing_pedestrian(const RouteSpec& r, double cross_arc, double start_time) {
    double x, y, yaw;
    polyline_at(r.polyline, cross_arc, x, y, yaw);
    // crossing from the left of the route to the right
    double lx = -std::sin(yaw), ly = std::cos(yaw);
    Agent a;
    a.type = AgentType::Pedestrian;
    a.width = 0.6;
    a.length = 0.6;
    a.speed = 1.0;
    a.start_time = start_time;
    a.path = {{x + 8.0 * lx, y + 8.0 * ly}, {x - 12.0 * lx, y - 12.0 * ly}};
    a.pose = {a.path[0][0], a.path[0][1], std::atan2(-ly, -lx)};
    return a;
}

inline Agent parked_vehicle(const RouteSpec& r, double arc, double lateral_right) {
    double x, y, yaw;
    polyline_at(r.polyline, arc, x, y, yaw);
    Agent a;
    a.type = AgentType::Static;
    a.pose = {x + std::sin(yaw) * lateral_right, y - std::cos(yaw) * lateral_right, yaw};
    return a;
}

}  // namespace detail

inline std::vector<RouteSpec> builtin_routes(const Config& cfg = Config{}) {
    (void)cfg;
    std::vector<RouteSpec> routes;

    {  // straight road with a light and a slower lead vehicle
        RouteSpec r;
        r.name = "straight";
        r.town = 1;
        for (int i = 0; i <= 140; ++i) r.polyline.push_back({static_cast<double>(i), 0.0});
        detail::finalize_route(r);
        r.lights.push_back({60.0, 30.0, 10.0, 0.0});
        r.agents.push_back(detail::lead_vehicle(r, 30.0, 2.0));
        r.agents.push_back(detail::parked_vehicle(r, 90.0, 4.0));
        routes.push_back(r);
    }
    {  // left turn with a crossing pedestrian
        RouteSpec r;
        r.name = "left_turn";
        r.town = 2;
        for (int i = 0; i <= 60; ++i) r.polyline.push_back({static_cast<double>(i), 0.0});
        auto arc = detail::sample_arc(60.0, 20.0, 20.0, -M_PI / 2.0, 0.0, 1.0);
        r.polyline.insert(r.polyline.end(), arc.begin(), arc.end());
        for (int i = 1; i <= 50; ++i) r.polyline.push_back({80.0, 20.0 + static_cast<double>(i)});
        detail::finalize_route(r);
        r.lights.push_back({45.0, 30.0, 10.0, 0.0});
        r.agents.push_back(detail::crossing_pedestrian(r, 85.0, 20.0));
        r.agents.push_back(detail::parked_vehicle(r, 30.0, -4.5));
        routes.push_back(r);
    }
    {  // right turn with a crossing pedestrian
        RouteSpec r;
        r.name = "right_turn";
        r.town = 3;
        for (int i = 0; i <= 60; ++i) r.polyline.push_back({static_cast<double>(i), 0.0});
        auto arc = detail::sample_arc(60.0, -20.0, 20.0, M_PI / 2.0, 0.0, 1.0);
        r.polyline.insert(r.polyline.end(), arc.begin(), arc.end());
        for (int i = 1; i <= 50; ++i) r.polyline.push_back({80.0, -20.0 - static_cast<double>(i)});
        detail::finalize_route(r);
        r.lights.push_back({50.0, 30.0, 10.0, 5.0});
        r.agents.push_back(detail::crossing_pedestrian(r, 90.0, 25.0));
        routes.push_back(r);
    }
    {  // s-curve with a lead vehicle
        RouteSpec r;
        r.name = "s_curve";
        r.town = 4;
        for (int i = 0; i <= 40; ++i) r.polyline.push_back({static_cast<double>(i), 0.0});
        auto arc1 = detail::sample_arc(40.0, 25.0, 25.0, -M_PI / 2.0, -M_PI / 6.0, 1.0);
        r.polyline.insert(r.polyline.end(), arc1.begin(), arc1.end());
        // mirror arc back to straight
        double jx = r.polyline.back()[0], jy = r.polyline.back()[1];
        double cx = jx + 25.0 * std::cos(-M_PI / 6.0), cy = jy + 25.0 * std::sin(-M_PI / 6.0);
        auto arc2 = detail::sample_arc(cx, cy, 25.0, M_PI - M_PI / 6.0, M_PI / 2.0, 1.0);
        r.polyline.insert(r.polyline.end(), arc2.begin(), arc2.end());
        double ex = r.polyline.back()[0], ey = r.polyline.back()[1];
        double dyaw = std::atan2(ey - r.polyline[r.polyline.size() - 2][1],
                                 ex - r.polyline[r.polyline.size() - 2][0]);
        for (int i = 1; i <= 40; ++i)
            r.polyline.push_back({ex + std::cos(dyaw) * static_cast<double>(i),
                                  ey + std::sin(dyaw) * static_cast<double>(i)});
        detail::finalize_route(r);
        r.lights.push_back({35.0, 30.0, 10.0, 10.0});
        r.agents.push_back(detail::lead_vehicle(r, 28.0, 2.2));
        routes.push_back(r);
    }
    return routes;
}

// --- Synthetic sensors ----------------------------------------------------------

// Procedurally rendered occupancy raster standing in for a camera image.
// View frame: the ego frame rotated by view_offset (left +60deg, right -60deg).
// Channel 0 paints the route and next target, channel 1 the agents, channel 2
// the traffic-light stop line (bright when red).
inline Tensor render_camera(const Scene& scene, double view_offset, const Config& cfg) {
    std::size_t n = cfg.sim_image_size;
    Tensor img = Tensor::zeros({3, n, n});
    double m_per_px = 32.0 / static_cast<double>(n);
    Pose view = scene.ego;
    view.yaw = wrap_angle(scene.ego.yaw + view_offset);
    auto paint = [&](std::size_t ch, double wx, double wy, double value, int radius) {
        double ex, ey;
        world_to_ego(view, wx, wy, ex, ey);
        if (ex < 0.0 || ex >= 32.0 || ey < -16.0 || ey >= 16.0) return;
        std::ptrdiff_t row = static_cast<std::ptrdiff_t>(n) - 1 -
                             static_cast<std::ptrdiff_t>(std::floor(ex / m_per_px));
        std::ptrdiff_t col = static_cast<std::ptrdiff_t>(std::floor((ey + 16.0) / m_per_px));
        for (std::ptrdiff_t dr = -radius; dr <= radius; ++dr)
            for (std::ptrdiff_t dc = -radius; dc <= radius; ++dc) {
                std::ptrdiff_t rr = row + dr, cc = col + dc;
                if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(n) ||
                    cc >= static_cast<std::ptrdiff_t>(n))
                    continue;
                double& px = img.data()[(ch * n + static_cast<std::size_t>(rr)) * n +
                                        static_cast<std::size_t>(cc)];
                px = std::max(px, value);
            }
    };

    for (double s = 0.0; s < scene.route.length; s += 1.0) {
        double x, y, yaw;
        polyline_at(scene.route.polyline, s, x, y, yaw);
        paint(0, x, y, 0.5, 0);
    }
    auto tgt = gt_target(scene);
    {
        double wx = scene.ego.x + tgt[0] * std::cos(scene.ego.yaw) + tgt[1] * std::sin(scene.ego.yaw);
        double wy = scene.ego.y + tgt[0] * std::sin(scene.ego.yaw) - tgt[1] * std::cos(scene.ego.yaw);
        paint(0, wx, wy, 1.0, 1);
    }
    for (const auto& a : scene.agents) {
        double v = a.type == AgentType::Vehicle ? 1.0 : (a.type == AgentType::Pedestrian ? 0.8 : 0.6);
        paint(1, a.pose.x, a.pose.y, v, 1);
    }
    for (const auto& l : scene.route.lights) {
        double x, y, yaw;
        polyline_at(scene.route.polyline, l.stop_arc, x, y, yaw);
        paint(2, x, y, l.is_red(scene.time_s(cfg)) ? 1.0 : 0.3, 1);
    }
    return img;
}

// Synthetic lidar sweep: agent box perimeters, route line returns, and a
// deterministic ground scatter seeded from (seed, tick).
inline PointCloud make_lidar(const Scene& scene, const Config& cfg) {
    PointCloud cloud;
    auto add_ego_frame = [&](double wx, double wy, double z) {
        double ex, ey;
        world_to_ego(scene.ego, wx, wy, ex, ey);
        if (ex < -cfg.bev_extent_rear - 2.0 || ex > cfg.bev_extent_front + 2.0 ||
            std::abs(ey) > cfg.bev_extent_side + 2.0)
            return;
        cloud.points.push_back({ex, ey, z});
    };
    for (const auto& a : scene.agents) {
        double c = std::cos(a.pose.yaw), s = std::sin(a.pose.yaw);
        double hl = a.length / 2.0, hw = a.width / 2.0;
        for (double u = -1.0; u <= 1.0; u += 0.25) {
            add_ego_frame(a.pose.x + u * hl * c - hw * s, a.pose.y + u * hl * s + hw * c, 0.5);
            add_ego_frame(a.pose.x + u * hl * c + hw * s, a.pose.y + u * hl * s - hw * c, 0.5);
            add_ego_frame(a.pose.x + hl * c - u * hw * s, a.pose.y + hl * s + u * hw * c, 0.5);
            add_ego_frame(a.pose.x - hl * c - u * hw * s, a.pose.y - hl * s + u * hw * c, 0.5);
        }
    }
    for (double s = 0.0; s < scene.route.length; s += 0.5) {
        double x, y, yaw;
        polyline_at(scene.route.polyline, s, x, y, yaw);
        add_ego_frame(x, y, 0.0);
    }
    Rng rng(scene.seed ^ (0x9e3779b97f4a7c15ULL * (scene.tick + 1)));
    for (int i = 0; i < 256; ++i) {
        double ex = rng.uniform(-cfg.bev_extent_rear, cfg.bev_extent_front);
        double ey = rng.uniform(-cfg.bev_extent_side, cfg.bev_extent_side);
        cloud.points.push_back({ex, ey, 0.0});
    }
    return cloud;
}

}  // namespace m2da
