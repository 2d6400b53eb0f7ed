#include <gtest/gtest.h>

#include <cmath>

#include "m2da/tensor.hpp"

using namespace m2da;

TEST(Tensor, ConstructionAndAccess) {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_EQ(t.dim(0), 2u);
    EXPECT_EQ(t.dim(1), 3u);
    EXPECT_DOUBLE_EQ(t.at(1, 2), 6.0);
    EXPECT_THROW(Tensor({2, 2}, {1.0}), std::invalid_argument);
    EXPECT_THROW(Tensor::scalar(1.0).at(0, 0), std::out_of_range);
}

TEST(Tensor, MatmulOracle) {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b({3, 2}, {7, 8, 9, 10, 11, 12});
    Tensor c = matmul(a, b);
    EXPECT_DOUBLE_EQ(c.at(0, 0), 58.0);
    EXPECT_DOUBLE_EQ(c.at(0, 1), 64.0);
    EXPECT_DOUBLE_EQ(c.at(1, 0), 139.0);
    EXPECT_DOUBLE_EQ(c.at(1, 1), 154.0);
    EXPECT_THROW(matmul(a, a), std::invalid_argument);
}

TEST(Tensor, SoftmaxRowsSumToOne) {
    Rng rng(11);
    Tensor x = rng.uniform_tensor({5, 7}, -4.0, 4.0);
    Tensor s = softmax(x);
    for (std::size_t i = 0; i < 5; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < 7; ++j) {
            total += s.at(i, j);
            EXPECT_GT(s.at(i, j), 0.0);
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(Tensor, LayerNormStatistics) {
    Rng rng(5);
    Tensor x = rng.uniform_tensor({3, 16}, -2.0, 7.0);
    Tensor y = layer_norm(x, Tensor::ones({16}), Tensor::zeros({16}), 1e-12);
    for (std::size_t i = 0; i < 3; ++i) {
        double m = 0.0, v = 0.0;
        for (std::size_t j = 0; j < 16; ++j) m += y.at(i, j) / 16.0;
        for (std::size_t j = 0; j < 16; ++j) v += (y.at(i, j) - m) * (y.at(i, j) - m) / 16.0;
        EXPECT_NEAR(m, 0.0, 1e-10);
        EXPECT_NEAR(v, 1.0, 1e-6);
    }
    EXPECT_THROW(layer_norm(x, Tensor::ones({16}), Tensor::zeros({16}), 0.0),
                 std::invalid_argument);
}

TEST(Tensor, Conv2dIdentityKernel) {
    Rng rng(2);
    Tensor x = rng.uniform_tensor({1, 4, 4}, -1.0, 1.0);
    Tensor w = Tensor::zeros({1, 1, 3, 3});
    w.values()[4] = 1.0;  // center tap
    Tensor y = conv2d(x, w, Tensor::zeros({1}), 1, 1);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y.at(i), x.at(i));
}

TEST(Tensor, PadSymmetricHandExample) {
    Tensor x({2, 2}, {1, 2, 3, 4});
    Tensor p = pad_symmetric(x, 1);
    // half-sample symmetric: edge values mirror back
    EXPECT_DOUBLE_EQ(p.at(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(p.at(0, 1), 1.0);
    EXPECT_DOUBLE_EQ(p.at(0, 2), 2.0);
    EXPECT_DOUBLE_EQ(p.at(0, 3), 2.0);
    EXPECT_DOUBLE_EQ(p.at(3, 0), 3.0);
    EXPECT_DOUBLE_EQ(p.at(3, 3), 4.0);
}

TEST(Tensor, ReshapeTransposeConcatSlice) {
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor r = reshape(x, {3, 2});
    EXPECT_DOUBLE_EQ(r.at(2, 1), 6.0);
    Tensor t = transpose(x);
    EXPECT_DOUBLE_EQ(t.at(2, 1), 6.0);
    EXPECT_DOUBLE_EQ(t.at(0, 1), 4.0);
    Tensor c = concat_rows({x, x});
    EXPECT_EQ(c.dim(0), 4u);
    Tensor s = slice_rows(c, 2, 4);
    EXPECT_DOUBLE_EQ(s.at(1, 2), 6.0);
    EXPECT_THROW(reshape(x, {4, 2}), std::invalid_argument);
}

TEST(Tape, NonScalarBackwardThrows) {
    Tape tape;
    Tensor x({2}, {1.0, 2.0});
    Tensor y = scale(x, 2.0, &tape);
    EXPECT_THROW(tape.backward(y), std::invalid_argument);
}

TEST(Tape, BackwardIsBitDeterministic) {
    Rng rng(77);
    Tensor x = rng.uniform_tensor({4, 4}, -1.0, 1.0);
    auto run = [&]() {
        Tape tape;
        Tensor y = sum(mul(softmax(x, &tape), sigmoid(x, &tape), &tape), &tape);
        tape.backward(y);
        return x.grad();
    };
    auto g1 = run();
    auto g2 = run();
    ASSERT_EQ(g1.size(), g2.size());
    for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_EQ(g1[i], g2[i]);
}

// Finite-difference property check over many seeds for each differentiable op.
TEST(Gradients, ElementwiseOpsManySeeds) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        Tensor x = rng.uniform_tensor({3, 4}, 0.2, 2.0);  // positive domain for log/sqrt
        Tensor y = rng.uniform_tensor({3, 4}, 0.2, 2.0);
        auto chk = [&](auto f) { return finite_diff_check(f, x); };
        EXPECT_LT(chk([&](const Tensor& t, Tape* tp) { return sum(relu(t, tp), tp); }), 1e-4);
        EXPECT_LT(chk([&](const Tensor& t, Tape* tp) { return sum(sigmoid(t, tp), tp); }), 1e-4);
        EXPECT_LT(chk([&](const Tensor& t, Tape* tp) { return sum(tanh_op(t, tp), tp); }), 1e-4);
        EXPECT_LT(chk([&](const Tensor& t, Tape* tp) { return sum(log_op(t, tp), tp); }), 1e-4);
        EXPECT_LT(chk([&](const Tensor& t, Tape* tp) { return sum(sqrt_op(t, tp), tp); }), 1e-4);
        EXPECT_LT(chk([&](const Tensor& t, Tape* tp) { return sum(abs_op(t, tp), tp); }), 1e-4);
        EXPECT_LT(chk([&](const Tensor& t, Tape* tp) { return sum(mul(t, y, tp), tp); }), 1e-4);
        EXPECT_LT(chk([&](const Tensor& t, Tape* tp) { return sum(div(t, y, tp), tp); }), 1e-4);
        EXPECT_LT(chk([&](const Tensor& t, Tape* tp) { return sum(min_op(t, y, tp), tp); }), 1e-4);
        EXPECT_LT(chk([&](const Tensor& t, Tape* tp) { return mean(t, tp); }), 1e-4);
    }
}

TEST(Gradients, StructuredOpsManySeeds) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed + 100);
        Tensor x = rng.uniform_tensor({4, 6}, -1.0, 1.0);
        Tensor w = rng.uniform_tensor({6, 3}, -1.0, 1.0);
        Tensor g = rng.uniform_tensor({6}, 0.5, 1.5);
        Tensor b = rng.uniform_tensor({6}, -0.5, 0.5);
        EXPECT_LT(finite_diff_check(
                      [&](const Tensor& t, Tape* tp) { return sum(matmul(t, w, tp), tp); }, x),
                  1e-4);
        // plain sum(softmax) is constant; weight the rows so the gradient is nonzero
        EXPECT_LT(finite_diff_check(
                      [&](const Tensor& t, Tape* tp) {
                          return sum(matmul(softmax(t, tp), w, tp), tp);
                      },
                      x),
                  1e-4);
        EXPECT_LT(finite_diff_check(
                      [&](const Tensor& t, Tape* tp) {
                          return sum(mul(softmax(t, tp), t, tp), tp);
                      },
                      x),
                  1e-4);
        EXPECT_LT(finite_diff_check(
                      [&](const Tensor& t, Tape* tp) {
                          return sum(layer_norm(t, g, b, 1e-5, tp), tp);
                      },
                      x),
                  1e-4);
        EXPECT_LT(finite_diff_check(
                      [&](const Tensor& t, Tape* tp) { return sum(add_rowvec(t, g, tp), tp); }, x),
                  1e-4);
        EXPECT_LT(finite_diff_check(
                      [&](const Tensor& t, Tape* tp) {
                          return sum(scaled_dot_attention(t, x, x, 6, tp), tp);
                      },
                      x),
                  1e-4);
    }
}

TEST(Gradients, ConvPoolPadManySeeds) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed + 200);
        Tensor img = rng.uniform_tensor({2, 6, 6}, -1.0, 1.0);
        Tensor w = rng.uniform_tensor({3, 2, 3, 3}, -0.5, 0.5);
        Tensor b = rng.uniform_tensor({3}, -0.1, 0.1);
        EXPECT_LT(finite_diff_check(
                      [&](const Tensor& t, Tape* tp) {
                          return sum(conv2d(t, w, b, 2, 1, tp), tp);
                      },
                      img),
                  1e-4);
        EXPECT_LT(finite_diff_check(
                      [&](const Tensor& t, Tape* tp) {
                          return sum(conv2d(img, t, b, 1, 1, tp), tp);
                      },
                      w),
                  1e-4);
        EXPECT_LT(finite_diff_check(
                      [&](const Tensor& t, Tape* tp) { return sum(avg_pool2d(t, 2, tp), tp); },
                      img),
                  1e-4);
        EXPECT_LT(finite_diff_check(
                      [&](const Tensor& t, Tape* tp) {
                          return sum(upsample_nearest(t, 12, 12, tp), tp);
                      },
                      img),
                  1e-4);
        Tensor m = rng.uniform_tensor({5, 5}, -1.0, 1.0);
        EXPECT_LT(finite_diff_check(
                      [&](const Tensor& t, Tape* tp) {
                          return sum(mul(pad_symmetric(t, 2, tp),
                                         pad_symmetric(t, 2, tp), tp), tp);
                      },
                      m),
                  1e-4);
        EXPECT_LT(finite_diff_check(
                      [&](const Tensor& t, Tape* tp) { return sum(global_avg_pool(t, tp), tp); },
                      img),
                  1e-4);
    }
}

TEST(Gradients, BceClampBoundary) {
    Tensor p({3}, {0.3, 1e-9, 1.0 - 1e-9});
    Tensor t({3}, {1.0, 0.0, 1.0});
    Tape tape;
    Tensor l = sum(bce(p, t, 1e-7, &tape), &tape);
    tape.backward(l);
    EXPECT_TRUE(std::isfinite(l.item()));
    for (double g : p.grad()) EXPECT_TRUE(std::isfinite(g));
    // clamped entries contribute zero gradient
    EXPECT_EQ(p.grad()[1], 0.0);
    EXPECT_EQ(p.grad()[2], 0.0);
}

TEST(Rng, Reproducible) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.uniform(), b.uniform());
    Rng c(42), d(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(c.normal(), d.normal());
}
