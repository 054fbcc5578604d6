#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ubalance/features.hpp"

using namespace ubalance;

namespace {

// Straightforward two-pass reference, written independently of the library.
std::array<double, 4> brute_stats(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    const double m = s / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / static_cast<double>(v.size())), *std::min_element(v.begin(), v.end()),
            *std::max_element(v.begin(), v.end())};
}

WindowValues random_window(std::mt19937_64& gen, int rows = 25) {
    std::normal_distribution<double> n(0.0, 3.0);
    WindowValues w(rows, kChannels);
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = n(gen);
    return w;
}

}  // namespace

TEST(Features, HeadingRampExample) {
    WindowValues w = WindowValues::Zero(25, 4);
    for (int i = 0; i < 25; ++i) w(i, kHeading) = i;
    const auto f = extract_features(w);
    EXPECT_DOUBLE_EQ(f[0], 12.0);
    EXPECT_NEAR(f[1], 7.2111025509, 1e-9);
    EXPECT_DOUBLE_EQ(f[2], 0.0);
    EXPECT_DOUBLE_EQ(f[3], 24.0);
}

TEST(Features, ConstantChannelIsExact) {
    WindowValues w(25, 4);
    w.col(0).setConstant(0.1);
    w.col(1).setConstant(-3.7);
    w.col(2).setConstant(1e6 + 0.3);
    w.col(3).setConstant(10.0);
    const auto f = extract_features(w);
    for (int c = 0; c < 4; ++c) {
        EXPECT_EQ(f[4 * c + 0], w(0, c));
        EXPECT_EQ(f[4 * c + 1], 0.0);
        EXPECT_EQ(f[4 * c + 2], w(0, c));
        EXPECT_EQ(f[4 * c + 3], w(0, c));
    }
}

TEST(Features, MatchesBruteForce) {
    std::mt19937_64 gen(5);
    for (int trial = 0; trial < 50; ++trial) {
        const auto w = random_window(gen, 5 + trial);
        const auto f = extract_features(w);
        for (int c = 0; c < 4; ++c) {
            std::vector<double> col(w.col(c).data(), w.col(c).data() + w.rows());
            const auto ref = brute_stats(col);
            for (int k = 0; k < 4; ++k) EXPECT_NEAR(f[4 * c + k], ref[static_cast<std::size_t>(k)], 1e-12);
        }
    }
}

TEST(Features, PermutationInvariant) {
    std::mt19937_64 gen(9);
    const auto w = random_window(gen);
    std::vector<int> order(25);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), gen);
    WindowValues p(25, 4);
    for (int i = 0; i < 25; ++i) p.row(i) = w.row(order[static_cast<std::size_t>(i)]);
    const auto a = extract_features(w), b = extract_features(p);
    for (int k = 0; k < kFeatureDim; ++k) EXPECT_NEAR(a[k], b[k], 1e-12);
}

TEST(Features, AffineResponse) {
    std::mt19937_64 gen(13);
    const auto w = random_window(gen);
    const auto f = extract_features(w);
    for (double a : {2.5, -0.5}) {
        const double b = 4.0;
        const WindowValues t = (a * w.array() + b).matrix();
        const auto g = extract_features(t);
        for (int c = 0; c < 4; ++c) {
            EXPECT_NEAR(g[4 * c + 0], a * f[4 * c + 0] + b, 1e-9);
            EXPECT_NEAR(g[4 * c + 1], std::abs(a) * f[4 * c + 1], 1e-9);
            const double lo = a > 0 ? f[4 * c + 2] : f[4 * c + 3];
            const double hi = a > 0 ? f[4 * c + 3] : f[4 * c + 2];
            EXPECT_NEAR(g[4 * c + 2], a * lo + b, 1e-9);
            EXPECT_NEAR(g[4 * c + 3], a * hi + b, 1e-9);
        }
    }
}

TEST(Features, OrderingInvariants) {
    std::mt19937_64 gen(17);
    for (int trial = 0; trial < 100; ++trial) {
        const auto f = extract_features(random_window(gen));
        for (int c = 0; c < 4; ++c) {
            EXPECT_LE(f[4 * c + 2], f[4 * c + 0]);
            EXPECT_LE(f[4 * c + 0], f[4 * c + 3]);
            EXPECT_GE(f[4 * c + 1], 0.0);
            EXPECT_LE(f[4 * c + 1], f[4 * c + 3] - f[4 * c + 2]);
        }
    }
}

TEST(Features, SingleRowAndErrors) {
    WindowValues one(1, 4);
    one << 1, 2, 3, 4;
    const auto f = extract_features(one);
    EXPECT_EQ(f[1], 0.0);
    EXPECT_EQ(f[12], 4.0);
    EXPECT_THROW(extract_features(WindowValues(0, 4)), ContractViolation);
    EXPECT_THROW(extract_features(WindowValues::Zero(5, 3)), ContractViolation);
    WindowValues bad = WindowValues::Zero(5, 4);
    bad(2, 1) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(extract_features(bad), DomainError);
}

TEST(Features, MatrixColumnsMatchSingleExtraction) {
    std::mt19937_64 gen(21);
    std::vector<Window> ws(6);
    for (auto& w : ws) w.values = random_window(gen);
    const auto m = feature_matrix(ws);
    ASSERT_EQ(m.rows(), 16);
    ASSERT_EQ(m.cols(), 6);
    for (int i = 0; i < 6; ++i) EXPECT_EQ(m.col(i), extract_features(ws[static_cast<std::size_t>(i)].values));
}
