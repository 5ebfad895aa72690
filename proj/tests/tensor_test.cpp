#include <gtest/gtest.h>

#include "ksnet/tensor.hpp"
#include "oracles.hpp"

using namespace ksnet;

namespace {

template <typename T>
Tensor<T> random_tensor(std::vector<std::size_t> shape, Rng& rng, double bound = 1.0) {
    Tensor<T> t(std::move(shape));
    fill_uniform(t, rng, bound);
    return t;
}

TEST(Tensor, InvariantsAndErrors) {
    Tensor<float> t({2, 3}, 1.5f);
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_THROW(Tensor<float>({2, 0, 3}), ShapeError);
    EXPECT_THROW(Tensor<float>::from({2, 2}, {1.f, 2.f, 3.f}), ShapeError);
}

TEST(Elementwise, Examples) {
    auto a = Tensor<double>::from({2}, {1, 2});
    auto b = Tensor<double>::from({2}, {3, 4});
    auto sum = add(a, b);
    EXPECT_EQ(sum[0], 4);
    EXPECT_EQ(sum[1], 6);

    auto zeroed = scale(Tensor<double>::from({3}, {1, 2, 3}), 0.0);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(zeroed[i], 0.0);

    Rng rng(11);
    auto x = random_tensor<double>({4, 5}, rng);
    Tensor<double> ones(x.shape(), 1.0);
    EXPECT_TRUE(oracles::bitwise_equal(mul(x, ones), x));

    // Inputs are untouched.
    auto ax = a;
    (void)add(a, b);
    EXPECT_TRUE(oracles::bitwise_equal(a, ax));
}

TEST(Elementwise, ShapeMismatchNamesBothShapes) {
    Tensor<float> a({2, 3}), b({3, 2});
    try {
        (void)add(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("(2,3)"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("(3,2)"), std::string::npos);
    }
}

TEST(Matmul, Examples) {
    Tensor<double> eye({3, 3}, 0.0);
    for (int i = 0; i < 3; ++i) eye.at2(i, i) = 1.0;
    Rng rng(3);
    auto x = random_tensor<double>({3, 4}, rng);
    EXPECT_TRUE(oracles::bitwise_equal(matmul(eye, x), x));

    auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
    auto b = Tensor<double>::from({2, 1}, {1, 1});
    auto c = matmul(a, b);
    EXPECT_EQ(c.at2(0, 0), 3);
    EXPECT_EQ(c.at2(1, 0), 7);

    EXPECT_THROW(matmul(Tensor<double>({2, 3}), Tensor<double>({2, 3})), ShapeError);
}

TEST(Matmul, MatchesTripleLoopOracleExactly) {
    Rng rng(17);
    auto a = random_tensor<double>({7, 5}, rng);
    auto b = random_tensor<double>({5, 9}, rng);
    auto got = matmul(a, b);
    auto want = oracles::naive_matmul(a, b);
    // Same ascending-k accumulation order: bitwise identical in 64-bit mode.
    EXPECT_TRUE(oracles::bitwise_equal(got, want));
}

TEST(Im2col, SingleColumnEqualsFlattenedInput) {
    Rng rng(5);
    auto x = random_tensor<double>({1, 1, 3, 3}, rng);
    auto cols = im2col(x, ConvGeom{3, 3, 1, 1, 0, 0});
    ASSERT_EQ(cols.shape(), (std::vector<std::size_t>{1, 9, 1}));
    for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(cols[i], x[i]);
}

TEST(Im2col, UnitKernelIsIdentity) {
    auto x = Tensor<double>::from({1, 1, 2, 2}, {1, 2, 3, 4});
    auto cols = im2col(x, ConvGeom{});
    ASSERT_EQ(cols.shape(), (std::vector<std::size_t>{1, 1, 4}));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(cols[i], x[i]);
}

TEST(Im2col, ConvViaMatmulMatchesNestedLoopOracle) {
    Rng rng(23);
    auto x = random_tensor<double>({2, 3, 8, 8}, rng);
    auto w = random_tensor<double>({4, 3, 3, 3}, rng);
    Tensor<double> nob;
    const ConvGeom g{3, 3, 1, 1, 1, 1};
    auto cols = im2col(x, g);
    // (Cout, C*kh*kw) x (C*kh*kw, Ho*Wo) per sample.
    auto wmat = w.reshaped({4, 27});
    Tensor<double> got({2, 4, 8, 8});
    for (std::size_t n = 0; n < 2; ++n) {
        Tensor<double> cn({27, 64});
        std::copy(cols.data() + n * 27 * 64, cols.data() + (n + 1) * 27 * 64, cn.data());
        auto on = matmul(wmat, cn);
        std::copy(on.data(), on.data() + 4 * 64, got.data() + n * 4 * 64);
    }
    auto want = oracles::naive_conv2d(x, w, nob, 1, 1, 1);
    EXPECT_LE(oracles::max_abs_diff(got, want), 1e-12);
}

TEST(Im2col, ImpossibleGeometryFails) {
    Tensor<double> x({1, 1, 2, 2});
    EXPECT_THROW(im2col(x, ConvGeom{5, 5, 1, 1, 0, 0}), ShapeError);
}

TEST(Col2im, RoundTripWithUnitKernel) {
    Rng rng(7);
    auto x = random_tensor<double>({2, 3, 4, 4}, rng);
    auto cols = im2col(x, ConvGeom{});
    auto back = col2im(cols, 2, 3, 4, 4, ConvGeom{});
    EXPECT_TRUE(oracles::bitwise_equal(back, x));
}

TEST(Col2im, ZeroColumnsGiveZeroImage) {
    ConvGeom g{3, 3, 1, 1, 1, 1};
    Tensor<double> cols({1, 9, 16}, 0.0);
    auto img = col2im(cols, 1, 1, 4, 4, g);
    for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_EQ(img[i], 0.0);
}

TEST(Col2im, GeometryMismatchFails) {
    Tensor<double> cols({1, 9, 16});
    EXPECT_THROW(col2im(cols, 1, 2, 4, 4, ConvGeom{3, 3, 1, 1, 1, 1}), ShapeError);
}

// Adjointness <col2im(Y), X> == <Y, im2col(X)> quantified over kernel sizes
// {1,3,9}, strides {1,2} and random shapes.
TEST(Col2im, AdjointOfIm2colAcrossGeometries) {
    Rng rng(99);
    for (std::size_t k : {1u, 3u, 9u}) {
        for (std::size_t s : {1u, 2u}) {
            for (int rep = 0; rep < 3; ++rep) {
                const std::size_t N = 1 + rng.next_below(2);
                const std::size_t C = 1 + rng.next_below(3);
                const std::size_t H = k + rng.next_below(6);
                const std::size_t W = k + rng.next_below(6);
                const std::size_t p = rng.next_below(k / 2 + 1);
                const ConvGeom g{k, k, s, s, p, p};
                auto x = random_tensor<double>({N, C, H, W}, rng);
                auto cols = im2col(x, g);
                auto y = random_tensor<double>(cols.shape(), rng);
                const double lhs = inner(col2im(y, N, C, H, W, g), x);
                const double rhs = inner(y, cols);
                EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)))
                    << "k=" << k << " s=" << s << " shape " << N << "," << C << "," << H << ","
                    << W;
            }
        }
    }
}

TEST(Rng, SameSeedSameSequence) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
    Tensor<double> t1({64}), t2({64});
    Rng c(7), d(7);
    fill_uniform(t1, c, 1.0);
    fill_uniform(t2, d, 1.0);
    EXPECT_TRUE(oracles::bitwise_equal(t1, t2));
}

TEST(Rng, KnownFixedPoints) {
    // splitmix64 published test vector for seed 0.
    Rng r(0);
    EXPECT_EQ(r.next_u64(), 0xE220A8397B1DCDAFULL);
    EXPECT_EQ(r.next_u64(), 0x6E789E6AA1B965F4ULL);
    EXPECT_EQ(r.next_u64(), 0x06C45D188009454FULL);
}

TEST(Rng, ForksAreIndependentStreams) {
    Rng root(5);
    Rng a = root.fork(1), b = root.fork(2);
    EXPECT_NE(a.next_u64(), b.next_u64());
    Rng a2 = root.fork(1);
    a = root.fork(1);
    EXPECT_EQ(a.next_u64(), a2.next_u64());
}

// 32- and 64-bit modes agree to relative 1e-5 on forward ops for
// well-conditioned inputs.
TEST(Precision, F32AgreesWithF64OnForwardOps) {
    Rng rng(31);
    auto a64 = random_tensor<double>({6, 7}, rng);
    auto b64 = random_tensor<double>({7, 5}, rng);
    auto a32 = a64.cast<float>();
    auto b32 = b64.cast<float>();
    auto m64 = matmul(a64, b64);
    auto m32 = matmul(a32, b32);
    EXPECT_LE(oracles::rel_err_norm(m64, m32.cast<double>()), 1e-5);

    auto x64 = random_tensor<double>({2, 3, 6, 6}, rng);
    auto c64 = im2col(x64, ConvGeom{3, 3, 1, 1, 1, 1});
    auto c32 = im2col(x64.cast<float>(), ConvGeom{3, 3, 1, 1, 1, 1});
    EXPECT_LE(oracles::rel_err_norm(c64, c32.cast<double>()), 1e-6);
}

}  // namespace
