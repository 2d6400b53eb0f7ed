#include <gtest/gtest.h>

#include <cstdio>

#include "m2da/bev.hpp"

using namespace m2da;

TEST(Bev, OriginMapsToDocumentedCell) {
    PointCloud cloud;
    cloud.points.push_back({0.0f, 0.0f, 0.0f});
    BevGrid grid = rasterize(cloud);
    EXPECT_EQ(grid.cells_per_side, 256u);
    EXPECT_EQ(grid.at(224, 128), 1u);
    EXPECT_EQ(grid.total(), 1u);
    EXPECT_EQ(grid.dropped, 0u);
}

TEST(Bev, BoundaryCells) {
    PointCloud cloud;
    cloud.points.push_back({28.0f, -16.0f, 0.0f});   // row 0, col 0
    cloud.points.push_back({27.999f, 15.999f, 0.0f});  // row 0, col 255
    cloud.points.push_back({-3.999f, 0.0f, 0.0f});     // row 255
    cloud.points.push_back({-4.0f, 0.0f, 0.0f});       // dropped (row 256)
    cloud.points.push_back({0.0f, 16.0f, 0.0f});       // dropped (col 256)
    BevGrid grid = rasterize(cloud);
    EXPECT_EQ(grid.at(0, 0), 1u);
    EXPECT_EQ(grid.at(0, 255), 1u);
    EXPECT_EQ(grid.at(255, 128), 1u);
    EXPECT_EQ(grid.dropped, 2u);
    EXPECT_EQ(grid.total(), 3u);
}

TEST(Bev, ConservationRandomClouds) {
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        Rng rng(seed);
        PointCloud cloud;
        std::size_t n = 100 + static_cast<std::size_t>(rng.uniform(0.0, 900.0));
        for (std::size_t i = 0; i < n; ++i)
            cloud.points.push_back({static_cast<float>(rng.uniform(-10.0, 34.0)),
                                    static_cast<float>(rng.uniform(-20.0, 20.0)),
                                    static_cast<float>(rng.uniform(-2.0, 4.0))});
        BevGrid grid = rasterize(cloud);
        EXPECT_EQ(grid.total() + grid.dropped, cloud.points.size());
    }
}

TEST(Bev, TranslationByWholeCells) {
    // shifting every point by exactly one cell shifts the occupied cell
    PointCloud a, b;
    a.points.push_back({10.0f, 2.0f, 0.0f});
    b.points.push_back({10.125f, 2.125f, 0.0f});
    BevGrid ga = rasterize(a), gb = rasterize(b);
    std::size_t ra = 0, ca = 0, rb = 0, cb = 0;
    for (std::size_t r = 0; r < 256; ++r)
        for (std::size_t c = 0; c < 256; ++c) {
            if (ga.at(r, c)) { ra = r; ca = c; }
            if (gb.at(r, c)) { rb = r; cb = c; }
        }
    EXPECT_EQ(rb + 1, ra);
    EXPECT_EQ(cb, ca + 1);
}

TEST(Bev, DeterministicAcrossRuns) {
    Rng rng(9);
    PointCloud cloud;
    for (int i = 0; i < 5000; ++i)
        cloud.points.push_back({static_cast<float>(rng.uniform(-5.0, 29.0)),
                                static_cast<float>(rng.uniform(-17.0, 17.0)), 0.0f});
    BevGrid a = rasterize(cloud), b = rasterize(cloud);
    EXPECT_EQ(a.cells, b.cells);
    EXPECT_EQ(a.dropped, b.dropped);
}

TEST(Bev, ZClipOption) {
    Config cfg;
    cfg.bev_z_clip_enabled = true;
    cfg.bev_z_min = -1.0;
    cfg.bev_z_max = 2.0;
    PointCloud cloud;
    cloud.points.push_back({5.0f, 0.0f, 0.0f});
    cloud.points.push_back({5.0f, 0.0f, 5.0f});  // clipped away
    BevGrid grid = rasterize(cloud, cfg);
    EXPECT_EQ(grid.total(), 1u);
    EXPECT_EQ(grid.dropped, 1u);
}

TEST(Bev, TensorCompression) {
    PointCloud cloud;
    for (int i = 0; i < 3; ++i) cloud.points.push_back({0.0f, 0.0f, 0.0f});
    BevGrid grid = rasterize(cloud);
    Tensor raw = bev_to_tensor(grid, false);
    Tensor comp = bev_to_tensor(grid, true);
    EXPECT_EQ(raw.shape(), (Shape{1, 256, 256}));
    EXPECT_DOUBLE_EQ(raw.at(0, 224, 128), 3.0);
    EXPECT_DOUBLE_EQ(comp.at(0, 224, 128), std::log1p(3.0));
}

TEST(Bev, CloudAndGridRoundTrip) {
    Rng rng(31);
    PointCloud cloud;
    for (int i = 0; i < 777; ++i)
        cloud.points.push_back({static_cast<float>(rng.uniform(-10.0, 30.0)),
                                static_cast<float>(rng.uniform(-20.0, 20.0)),
                                static_cast<float>(rng.uniform(-1.0, 3.0))});
    std::string cpath = testing::TempDir() + "bev_cloud.bin";
    save_cloud(cloud, cpath);
    PointCloud loaded = load_cloud(cpath);
    ASSERT_EQ(loaded.points.size(), cloud.points.size());
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        EXPECT_EQ(loaded.points[i].x, cloud.points[i].x);
        EXPECT_EQ(loaded.points[i].y, cloud.points[i].y);
        EXPECT_EQ(loaded.points[i].z, cloud.points[i].z);
    }
    BevGrid grid = rasterize(cloud);
    std::string gpath = testing::TempDir() + "bev_grid.bin";
    save_grid(grid, gpath);
    BevGrid gloaded = load_grid(gpath);
    EXPECT_EQ(gloaded.cells, grid.cells);
    std::remove(cpath.c_str());
    std::remove(gpath.c_str());
}
