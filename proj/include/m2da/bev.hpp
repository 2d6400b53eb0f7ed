#pragma once

// Lidar point cloud to 2D BEV count grid. Ego frame: x forward, y right,
// z up. The grid covers 28 m ahead, 4 m behind and 16 m to each side at
// 0.125 m per cell, i.e. 256x256 cells. Row 0 is the far-front edge:
//   row = floor((28 - x) / 0.125), col = floor((y + 16) / 0.125)
// and a point is kept iff both indices land in [0, 256). This mapping is
// locked by golden tests.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "m2da/config.hpp"
#include "m2da/tensor.hpp"

namespace m2da {

struct LidarPoint {
    double x = 0.0, y = 0.0, z = 0.0;
};

struct PointCloud {
    std::vector<LidarPoint> points;
};

struct BevGrid {
    std::size_t cells_per_side = 256;
    std::vector<std::uint32_t> cells;  // row-major, cells_per_side^2
    std::size_t dropped = 0;           // out-of-bounds points

    std::uint32_t at(std::size_t row, std::size_t col) const {
        return cells[row * cells_per_side + col];
    }

    std::uint64_t total() const {
        std::uint64_t s = 0;
        for (auto c : cells) s += c;
        return s;
    }
};

inline BevGrid rasterize(const PointCloud& cloud, const Config& cfg = Config{}) {
    BevGrid grid;
    grid.cells_per_side = cfg.bev_cells;
    grid.cells.assign(grid.cells_per_side * grid.cells_per_side, 0);
    const double pitch = cfg.bev_meters_per_cell;
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(grid.cells_per_side);
    for (const auto& p : cloud.points) {
        if (cfg.bev_z_clip_enabled && (p.z < cfg.bev_z_min || p.z > cfg.bev_z_max)) {
            ++grid.dropped;
            continue;
        }
        std::ptrdiff_t row = static_cast<std::ptrdiff_t>(std::floor((cfg.bev_extent_front - p.x) / pitch));
        std::ptrdiff_t col = static_cast<std::ptrdiff_t>(std::floor((p.y + cfg.bev_extent_side) / pitch));
        if (row < 0 || row >= n || col < 0 || col >= n) {
            ++grid.dropped;
            continue;
        }
        ++grid.cells[static_cast<std::size_t>(row) * grid.cells_per_side + static_cast<std::size_t>(col)];
    }
    return grid;
}

// Counts as a [1, N, N] float tensor, optionally log1p-compressed.
inline Tensor bev_to_tensor(const BevGrid& grid, bool log1p_compress = true) {
    std::size_t n = grid.cells_per_side;
    std::vector<double> v(n * n);
    for (std::size_t i = 0; i < v.size(); ++i) {
        double c = static_cast<double>(grid.cells[i]);
        v[i] = log1p_compress ? std::log1p(c) : c;
    }
    return Tensor({1, n, n}, std::move(v));
}

// --- Binary record formats -------------------------------------------------
// Cloud: little-endian u32 count, then count x 3 little-endian f32 (x, y, z).
// Golden grids: raw u32 array, row-major.

inline void save_cloud(const PointCloud& cloud, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_cloud: cannot open " + path);
    std::uint32_t count = static_cast<std::uint32_t>(cloud.points.size());
    out.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& p : cloud.points) {
        float xyz[3] = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)};
        out.write(reinterpret_cast<const char*>(xyz), 12);
    }
}

inline PointCloud load_cloud(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_cloud: cannot open " + path);
    std::uint32_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 4);
    if (!in) throw std::runtime_error("load_cloud: truncated header in " + path);
    PointCloud cloud;
    cloud.points.resize(count);
    for (auto& p : cloud.points) {
        float xyz[3];
        in.read(reinterpret_cast<char*>(xyz), 12);
        if (!in) throw std::runtime_error("load_cloud: truncated payload in " + path);
        p = {xyz[0], xyz[1], xyz[2]};
    }
    return cloud;
}

inline void save_grid(const BevGrid& grid, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_grid: cannot open " + path);
    out.write(reinterpret_cast<const char*>(grid.cells.data()),
              static_cast<std::streamsize>(grid.cells.size() * sizeof(std::uint32_t)));
}

inline BevGrid load_grid(const std::string& path, std::size_t cells_per_side = 256) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_grid: cannot open " + path);
    BevGrid grid;
    grid.cells_per_side = cells_per_side;
    grid.cells.resize(cells_per_side * cells_per_side);
    in.read(reinterpret_cast<char*>(grid.cells.data()),
            static_cast<std::streamsize>(grid.cells.size() * sizeof(std::uint32_t)));
    if (!in) throw std::runtime_error("load_grid: truncated file " + path);
    return grid;
}

}  // namespace m2da
