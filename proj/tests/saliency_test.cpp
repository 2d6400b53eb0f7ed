#include <gtest/gtest.h>

#include <cstdio>

#include "m2da/saliency.hpp"

using namespace m2da;

namespace {

Tensor random_normalized_map(std::uint64_t seed, std::size_t h = 8, std::size_t w = 8) {
    Rng rng(seed);
    Tensor m = rng.uniform_tensor({h, w}, 0.01, 1.0);
    double total = 0.0;
    for (double v : m.values()) total += v;
    for (double& v : m.values()) v /= total;
    return m;
}

}  // namespace

TEST(Metrics, SelfIdentities) {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Tensor s = random_normalized_map(seed);
        EXPECT_LT(kld(s, s).item(), 1e-6);
        EXPECT_NEAR(cc(s, s).item(), 1.0, 1e-10);
        EXPECT_NEAR(sim(s, s).item(), 1.0, 1e-10);
    }
}

TEST(Metrics, KldHandOracle) {
    // 2-cell example evaluated by hand with eps = 1e-7
    Tensor s({2}, {0.75, 0.25});
    Tensor t({2}, {0.5, 0.5});
    double eps = 1e-7;
    double expected = 0.75 * std::log(eps + 0.75 / (eps + 0.5)) +
                      0.25 * std::log(eps + 0.25 / (eps + 0.5));
    EXPECT_NEAR(kld(s, t).item(), expected, 1e-12);
    EXPECT_GT(kld(s, t).item(), 0.0);
}

TEST(Metrics, CcSignAndZeroVariance) {
    Tensor s({4}, {0.1, 0.2, 0.3, 0.4});
    Tensor anti({4}, {0.4, 0.3, 0.2, 0.1});
    EXPECT_NEAR(cc(s, anti).item(), -1.0, 1e-10);
    Tensor flat({4}, {0.25, 0.25, 0.25, 0.25});
    EXPECT_THROW(cc(s, flat), std::domain_error);
}

TEST(Metrics, SimHandOracle) {
    Tensor s({2}, {0.7, 0.3});
    Tensor t({2}, {0.4, 0.6});
    EXPECT_NEAR(sim(s, t).item(), 0.4 + 0.3, 1e-12);
}

TEST(Metrics, GradientsFlow) {
    Tensor s = random_normalized_map(5);
    Tensor t = random_normalized_map(6);
    EXPECT_LT(finite_diff_check(
                  [&](const Tensor& x, Tape* tp) { return kld(x, t, 1e-7, tp); }, s, 1e-6),
              1e-4);
    EXPECT_LT(finite_diff_check([&](const Tensor& x, Tape* tp) { return cc(x, t, tp); }, s, 1e-6),
              1e-4);
    EXPECT_LT(finite_diff_check(
                  [&](const Tensor& x, Tape* tp) { return da_loss(x, t, Config{}, tp); }, s, 1e-6),
              1e-4);
}

TEST(Dabn, IdentityAffineNormalizes) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        Tensor x = rng.uniform_tensor({4, 6, 6}, -3.0, 9.0);
        DomainParams dom;
        dom.alpha = Tensor::ones({4});
        dom.beta = Tensor::zeros({4});
        Tensor y = dabn(x, dom, 1e-9);
        double m = 0.0, v = 0.0;
        double n = static_cast<double>(y.size());
        for (double val : y.values()) m += val / n;
        for (double val : y.values()) v += (val - m) * (val - m) / n;
        EXPECT_LT(std::abs(m), 1e-8);
        EXPECT_LT(std::abs(v - 1.0), 1e-3);
    }
}

TEST(Dabn, AffineApplied) {
    Rng rng(3);
    Tensor x = rng.uniform_tensor({2, 4, 4}, -1.0, 1.0);
    DomainParams dom;
    dom.alpha = Tensor({2}, {2.0, 0.5});
    dom.beta = Tensor({2}, {1.0, -1.0});
    DomainParams id;
    id.alpha = Tensor::ones({2});
    id.beta = Tensor::zeros({2});
    Tensor y = dabn(x, dom, 1e-9);
    Tensor base = dabn(x, id, 1e-9);
    for (std::size_t i = 0; i < 16; ++i) {
        EXPECT_NEAR(y.at(0, i / 4, i % 4), 2.0 * base.at(0, i / 4, i % 4) + 1.0, 1e-10);
        EXPECT_NEAR(y.at(1, i / 4, i % 4), 0.5 * base.at(1, i / 4, i % 4) - 1.0, 1e-10);
    }
}

TEST(Smoothing, MassConservation) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        Tensor m = rng.uniform_tensor({32, 32}, 0.0, 1.0);
        double before = 0.0;
        for (double v : m.values()) before += v;
        SaliencyMap out = gaussian_smooth({m, false}, 15);
        double after = 0.0;
        for (double v : out.values.values()) after += v;
        EXPECT_NEAR(after, before, 1e-9 * before);
    }
}

TEST(Smoothing, PeakSpreads) {
    Tensor m = Tensor::zeros({16, 16});
    m.values()[8 * 16 + 8] = 1.0;
    SaliencyMap out = gaussian_smooth({m, false}, 7, 1.5);
    EXPECT_LT(out.values.at(8, 8), 1.0);
    EXPECT_GT(out.values.at(8, 9), 0.0);
    EXPECT_GT(out.values.at(7, 8), 0.0);
}

TEST(Saliency, NormalizeHandlesZeroMap) {
    Tensor z = Tensor::zeros({4, 4});
    SaliencyMap n = normalize_saliency({z, false});
    for (double v : n.values.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 16.0);
}

TEST(Saliency, AttentionMaskIdentityOnZeroMap) {
    Rng rng(4);
    Tensor front = rng.uniform_tensor({3, 4, 4}, 0.0, 1.0);
    Tensor z = Tensor::zeros({4, 4});
    Tensor out = apply_attention_mask(front, {z, false});
    for (std::size_t i = 0; i < front.size(); ++i) EXPECT_DOUBLE_EQ(out.at(i), front.at(i));
    // peak cell doubles
    Tensor s = Tensor::zeros({4, 4});
    s.values()[5] = 0.7;
    Tensor masked = apply_attention_mask(front, {s, false});
    EXPECT_NEAR(masked.at(0, 1, 1), 2.0 * front.at(0, 1, 1), 1e-12);
    EXPECT_DOUBLE_EQ(masked.at(0, 0, 0), front.at(0, 0, 0));
}

TEST(Saliency, FixtureRasterRoundTrip) {
    Rng rng(8);
    Tensor m = rng.uniform_tensor({16, 16}, 0.0, 1.0);
    std::string path = testing::TempDir() + "raster.f32";
    save_raster_f32(m, path);
    Tensor back = load_raster_f32(path, 16, 16);
    for (std::size_t i = 0; i < m.size(); ++i)
        EXPECT_EQ(static_cast<float>(m.at(i)), static_cast<float>(back.at(i)));
    std::remove(path.c_str());
}

TEST(Saliency, FixtureManifestRoundTrip) {
    std::vector<FixturePair> pairs = {{"a.f32", "b.f32", 0.25, 0.5, 0.75},
                                      {"c.f32", "d.f32", 1.5, -0.25, 0.125}};
    std::string path = testing::TempDir() + "manifest.csv";
    save_fixture_manifest(pairs, path);
    auto back = load_fixture_manifest(path);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].predicted_path, "a.f32");
    EXPECT_EQ(back[1].ground_truth_path, "d.f32");
    EXPECT_DOUBLE_EQ(back[0].expected_kld, 0.25);
    EXPECT_DOUBLE_EQ(back[1].expected_sim, 0.125);
    std::remove(path.c_str());
}

TEST(SaliencyPredictor, DomainsAndStream) {
    Config cfg;
    Rng rng(1);
    SaliencyPredictor sp(32, cfg, rng);
    sp.register_domain(1);
    Rng in_rng(2);
    Tensor front = in_rng.uniform_tensor({3, 32, 32}, 0.0, 1.0);
    EXPECT_THROW(sp.predict(front, 99), std::domain_error);
    SaliencyMap a = sp.predict(front, 1);
    double total = 0.0;
    for (double v : a.values.values()) {
        EXPECT_GE(v, 0.0);
        total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
    // stream state advances, reset restores the initial output
    SaliencyMap b = sp.predict(front, 1);
    sp.reset_stream();
    SaliencyMap c = sp.predict(front, 1);
    bool b_differs = false;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        if (a.values.at(i) != b.values.at(i)) b_differs = true;
        EXPECT_EQ(a.values.at(i), c.values.at(i));
    }
    EXPECT_TRUE(b_differs);
}

TEST(SaliencyPredictor, ZeroHeadGivesSmoothedPrior) {
    Config cfg;
    Rng rng(1);
    SaliencyPredictor sp(32, cfg, rng);
    sp.register_domain(2);
    sp.zero_head();
    Rng in_rng(3);
    Tensor front = in_rng.uniform_tensor({3, 32, 32}, 0.0, 1.0);
    SaliencyMap out = sp.predict(front, 2);
    // with a zeroed head the output is the (smoothed, normalized) centered
    // prior: symmetric, peaked at the center
    std::size_t n = 32;
    EXPECT_GT(out.values.at(n / 2, n / 2), out.values.at(1, 1));
    EXPECT_NEAR(out.values.at(5, 7), out.values.at(26, 24), 1e-9);
}
