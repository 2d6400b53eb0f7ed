#pragma once

// Expert demonstration records and their binary serialization. The on-disk
// format is little-endian and round-trips bit-exactly.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "m2da/bev.hpp"
#include "m2da/config.hpp"
#include "m2da/decoder.hpp"
#include "m2da/sim.hpp"

namespace m2da {

struct ExpertRecord {
    Tensor left;    // [3, n, n]
    Tensor front;   // [3, n, n]
    Tensor right;   // [3, n, n]
    PointCloud cloud;
    double speed = 0.0;
    double target_x = 0.0, target_y = 0.0;
    int town = 0;
    Tensor waypoints;  // [T, 2]
    Tensor heatmap;    // [S, S, 7]
    double traffic_red = 0.0, traffic_stop = 0.0, traffic_intersection = 0.0;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline void put_f64(std::ostream& os, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

inline void put_tensor(std::ostream& os, const Tensor& t) {
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d = 0; d < t.rank(); ++d)
        put_u32(os, static_cast<std::uint32_t>(t.shape()[d]));
    for (double v : t.values()) put_f64(os, v);
}

inline Tensor get_tensor(std::istream& is) {
    std::uint32_t dim = get_u32(is);
    Shape shape;
    for (std::uint32_t d = 0; d < dim; ++d) shape.push_back(get_u32(is));
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.values()) v = get_f64(is);
    return t;
}

inline void put_cloud(std::ostream& os, const PointCloud& c) {
    put_u32(os, static_cast<std::uint32_t>(c.points.size()));
    for (const auto& p : c.points) {
        put_f64(os, p.x);
        put_f64(os, p.y);
        put_f64(os, p.z);
    }
}

inline PointCloud get_cloud(std::istream& is) {
    std::uint32_t n = get_u32(is);
    PointCloud c;
    c.points.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        double x = get_f64(is), y = get_f64(is), z = get_f64(is);
        c.points.push_back({x, y, z});
    }
    return c;
}

}  // namespace detail

inline void save_dataset(const std::vector<ExpertRecord>& records, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_dataset: cannot open " + path);
    os.write("M2DADSET", 8);
    detail::put_u32(os, 1);  // version
    detail::put_u32(os, static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
        detail::put_tensor(os, r.left);
        detail::put_tensor(os, r.front);
        detail::put_tensor(os, r.right);
        detail::put_cloud(os, r.cloud);
        detail::put_f64(os, r.speed);
        detail::put_f64(os, r.target_x);
        detail::put_f64(os, r.target_y);
        detail::put_u32(os, static_cast<std::uint32_t>(r.town));
        detail::put_tensor(os, r.waypoints);
        detail::put_tensor(os, r.heatmap);
        detail::put_f64(os, r.traffic_red);
        detail::put_f64(os, r.traffic_stop);
        detail::put_f64(os, r.traffic_intersection);
    }
}

inline std::vector<ExpertRecord> load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_dataset: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (std::string(magic, 8) != "M2DADSET") throw std::runtime_error("load_dataset: bad magic");
    std::uint32_t version = detail::get_u32(is);
    if (version != 1) throw std::runtime_error("load_dataset: unsupported version");
    std::uint32_t n = detail::get_u32(is);
    std::vector<ExpertRecord> records;
    records.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        ExpertRecord r;
        r.left = detail::get_tensor(is);
        r.front = detail::get_tensor(is);
        r.right = detail::get_tensor(is);
        r.cloud = detail::get_cloud(is);
        r.speed = detail::get_f64(is);
        r.target_x = detail::get_f64(is);
        r.target_y = detail::get_f64(is);
        r.town = static_cast<int>(detail::get_u32(is));
        r.waypoints = detail::get_tensor(is);
        r.heatmap = detail::get_tensor(is);
        r.traffic_red = detail::get_f64(is);
        r.traffic_stop = detail::get_f64(is);
        r.traffic_intersection = detail::get_f64(is);
        if (!is) throw std::runtime_error("load_dataset: truncated file");
        records.push_back(std::move(r));
    }
    return records;
}

// Ground-truth waypoints for supervision: future route positions at plan
// speed, in the current ego frame (same construction the expert drives by).
inline ExpertRecord make_record(const Scene& scene, const PolicyOutput& expert_out,
                                const Config& cfg) {
    ExpertRecord r;
    r.left = render_camera(scene, M_PI / 3.0, cfg);
    r.front = render_camera(scene, 0.0, cfg);
    r.right = render_camera(scene, -M_PI / 3.0, cfg);
    r.cloud = make_lidar(scene, cfg);
    r.speed = scene.ego_speed;
    auto tgt = gt_target(scene);
    r.target_x = tgt[0];
    r.target_y = tgt[1];
    r.town = scene.route.town;
    r.waypoints = waypoints_to_tensor(expert_out.waypoints);
    r.heatmap = encode_objects(expert_out.objects, cfg).values;
    r.traffic_red = expert_out.traffic.red_light;
    r.traffic_stop = expert_out.traffic.stop_sign;
    r.traffic_intersection = expert_out.traffic.intersection;
    return r;
}

// Rolls the expert over the route set (seed varied per lap) at the simulator
// rate until `max_frames` records are collected.
inline std::vector<ExpertRecord> collect_dataset(const std::vector<RouteSpec>& routes,
                                                 std::uint64_t seed, std::size_t max_frames,
                                                 const Config& cfg) {
    std::vector<ExpertRecord> records;
    std::uint64_t lap = 0;
    while (records.size() < max_frames) {
        for (const auto& route : routes) {
            if (records.size() >= max_frames) break;
            Scene scene = make_scene(route, seed + lap, cfg);
            Controller controller(cfg);
            std::size_t timeout = route.timeout_ticks(cfg);
            while (scene.tick < timeout && records.size() < max_frames) {
                PolicyOutput out = expert_policy(scene, cfg);
                records.push_back(make_record(scene, out, cfg));
                ControlSignal control = controller.control_step(out.waypoints, out.traffic,
                                                                out.objects, scene.ego_speed);
                step(scene, control, cfg);
                if (scene.progress >= route.length - 0.5) break;
            }
        }
        ++lap;
        if (lap > 200) throw std::runtime_error("collect_dataset: not enough frames generated");
    }
    return records;
}

}  // namespace m2da
