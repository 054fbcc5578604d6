#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "ubalance/metrics.hpp"

using namespace ubalance;
using namespace ubalance::metrics;

namespace {

// Exact two-sided p by enumerating every split of the pooled ranks.
double enumerate_mwu_p(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> pooled(a);
    pooled.insert(pooled.end(), b.begin(), b.end());
    const std::size_t n = pooled.size(), n1 = a.size();
    auto u_of = [&](const std::vector<char>& in_a) {
        double u = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (in_a[i] && !in_a[j]) u += pooled[i] > pooled[j] ? 1.0 : (pooled[i] == pooled[j] ? 0.5 : 0.0);
        return u;
    };
    std::vector<char> obs(n, 0);
    std::fill(obs.begin(), obs.begin() + static_cast<std::ptrdiff_t>(n1), 1);
    const double u_obs = u_of(obs);
    std::vector<char> sel(n, 0);
    std::fill(sel.end() - static_cast<std::ptrdiff_t>(n1), sel.end(), 1);
    double lower = 0.0, upper = 0.0, total = 0.0;
    do {
        const double u = u_of(sel);
        total += 1.0;
        if (u <= u_obs) lower += 1.0;
        if (u >= u_obs) upper += 1.0;
    } while (std::next_permutation(sel.begin(), sel.end()));
    return std::min(1.0, 2.0 * std::min(lower, upper) / total);
}

}  // namespace

TEST(Metrics, PrecisionRecallF1) {
    ConfusionCounts c{8, 80, 2, 10};
    const auto s = prf1(c);
    EXPECT_DOUBLE_EQ(s.precision, 0.8);
    EXPECT_NEAR(s.recall, 8.0 / 18.0, 1e-15);
    EXPECT_NEAR(s.f1, 2 * 0.8 * (8.0 / 18.0) / (0.8 + 8.0 / 18.0), 1e-15);
    const auto zero = prf1({0, 100, 0, 0});
    EXPECT_EQ(zero.precision, 0.0);
    EXPECT_EQ(zero.recall, 0.0);
    EXPECT_EQ(zero.f1, 0.0);
}

TEST(Metrics, ThresholdIsInclusive) {
    const auto m = evaluate_run({0.5, 0.4999, 0.9, 0.1}, {1, 1, 0, 0});
    EXPECT_EQ(m.counts.tp, 1);
    EXPECT_EQ(m.counts.fn, 1);
    EXPECT_EQ(m.counts.fp, 1);
    EXPECT_EQ(m.counts.tn, 1);
    EXPECT_THROW(evaluate_run({0.5}, {1, 0}), ContractViolation);
}

TEST(Metrics, PointBiserialMatchesPearsonBruteForce) {
    std::mt19937_64 gen(4);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> s;
    std::vector<int> l;
    for (int i = 0; i < 60; ++i) {
        l.push_back(i % 3 == 0);
        s.push_back(n(gen) + 0.8 * l.back());
    }
    // Pearson from raw sums, another formula.
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        sx += s[i];
        sy += l[i];
        sxx += s[i] * s[i];
        syy += l[i] * l[i];
        sxy += s[i] * l[i];
    }
    const double N = 60.0;
    const double r = (N * sxy - sx * sy) / std::sqrt((N * sxx - sx * sx) * (N * syy - sy * sy));
    const auto c = point_biserial(s, l);
    EXPECT_NEAR(c.r, r, 1e-12);
    EXPECT_GT(c.p_value, 0.0);
    EXPECT_LT(c.p_value, 0.05);
}

TEST(Metrics, PointBiserialKnownPValue) {
    // n = 4, r = sqrt(0.8): t = r sqrt(2 / (1 - r^2)) = sqrt(8) and the
    // two-sided p for t on 2 df is 1 - t / sqrt(t^2 + 2) = 1 - sqrt(0.8).
    const auto c = point_biserial({0.0, 1.0, 2.0, 3.0}, {0, 0, 1, 1});
    EXPECT_NEAR(c.r, std::sqrt(0.8), 1e-12);
    EXPECT_NEAR(c.p_value, 1.0 - std::sqrt(0.8), 1e-10);
}

TEST(Metrics, PointBiserialDegenerate) {
    EXPECT_THROW(point_biserial({1, 2, 3}, {1, 1, 1}), UndefinedCorrelation);
    EXPECT_THROW(point_biserial({2, 2, 2}, {0, 1, 1}), UndefinedCorrelation);
    EXPECT_THROW(point_biserial({1, 2}, {0, 1}), UndefinedCorrelation);
    const auto perfect = point_biserial({0, 0, 1, 1}, {0, 0, 1, 1});
    EXPECT_DOUBLE_EQ(perfect.r, 1.0);
    EXPECT_EQ(perfect.p_value, 0.0);
}

TEST(Metrics, A12Examples) {
    EXPECT_DOUBLE_EQ(vargha_delaney_a12({3, 4, 5}, {0, 1, 2}), 1.0);
    EXPECT_DOUBLE_EQ(vargha_delaney_a12({0, 1, 2}, {3, 4, 5}), 0.0);
    EXPECT_DOUBLE_EQ(vargha_delaney_a12({1, 1}, {1, 1}), 0.5);
    EXPECT_DOUBLE_EQ(vargha_delaney_a12({1, 3}, {2, 2}), 0.5);
    EXPECT_EQ(effect_label(0.5), "N");
    EXPECT_EQ(effect_label(0.6), "S");
    EXPECT_EQ(effect_label(0.7), "M");
    EXPECT_EQ(effect_label(0.71), "L");
    EXPECT_EQ(effect_label(0.2), "L");
}

TEST(Metrics, A12Symmetry) {
    std::mt19937_64 gen(8);
    std::uniform_int_distribution<int> d(0, 5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> a(5), b(7);
        for (auto& x : a) x = d(gen);
        for (auto& x : b) x = d(gen);
        EXPECT_NEAR(vargha_delaney_a12(a, b) + vargha_delaney_a12(b, a), 1.0, 1e-15);
        EXPECT_NEAR(mann_whitney_u(a, b).a12, vargha_delaney_a12(a, b), 1e-12);
    }
}

TEST(Metrics, ExactMannWhitneyMatchesEnumeration) {
    std::mt19937_64 gen(12);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto [n1, n2] : {std::pair{3, 3}, {4, 5}, {5, 5}, {6, 4}, {7, 7}}) {
        for (int trial = 0; trial < 5; ++trial) {
            std::vector<double> a, b;
            for (int i = 0; i < n1; ++i) a.push_back(n(gen) + 0.4 * trial);
            for (int i = 0; i < n2; ++i) b.push_back(n(gen));
            const auto r = mann_whitney_u(a, b);
            EXPECT_TRUE(r.exact);
            EXPECT_NEAR(r.p_value, enumerate_mwu_p(a, b), 1e-12) << n1 << "x" << n2;
        }
    }
}

TEST(Metrics, MannWhitneyKnownValues) {
    // Complete separation of 5 vs 5: p = 2 / C(10, 5) = 2 / 252.
    const auto r = mann_whitney_u({6, 7, 8, 9, 10}, {1, 2, 3, 4, 5});
    EXPECT_DOUBLE_EQ(r.statistic, 25.0);
    EXPECT_NEAR(r.p_value, 2.0 / 252.0, 1e-15);
    EXPECT_DOUBLE_EQ(r.a12, 1.0);
    // Ten vs ten, separated: normal approximation, well below 0.05.
    std::vector<double> hi, lo;
    for (int i = 0; i < 10; ++i) {
        hi.push_back(100 + i);
        lo.push_back(i);
    }
    const auto big = mann_whitney_u(hi, lo);
    EXPECT_FALSE(big.exact);
    EXPECT_LT(big.p_value, 1e-3);
    // All ties.
    const auto ties = mann_whitney_u({1, 1, 1}, {1, 1, 1});
    EXPECT_DOUBLE_EQ(ties.p_value, 1.0);
    EXPECT_DOUBLE_EQ(ties.a12, 0.5);
}

TEST(Metrics, MeanStdIsSample) {
    const auto m = mean_std({1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(m.mean, 2.5);
    EXPECT_NEAR(m.std, std::sqrt(5.0 / 3.0), 1e-15);
    EXPECT_EQ(mean_std({7}).std, 0.0);
}

TEST(Metrics, AggregateRuns) {
    auto run = [](double f1) {
        RunMetrics r;
        r.f1 = f1;
        r.precision = f1;
        r.recall = f1;
        return r;
    };
    MethodRuns a{"ulnr", {run(0.8), run(0.9), run(0.85)}, 10, 0.001};
    MethodRuns b{"none", {run(0.5), run(0.6), run(0.55)}, 10, 0.001};
    const auto rows = aggregate_runs({a, b});
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_FALSE(rows[0].p_value.has_value());
    EXPECT_NEAR(rows[0].f1.mean, 0.85, 1e-12);
    ASSERT_TRUE(rows[1].a12.has_value());
    EXPECT_DOUBLE_EQ(*rows[1].a12, 1.0);
    EXPECT_NEAR(*rows[1].p_value, 2.0 / 20.0, 1e-12);
    EXPECT_EQ(rows[1].effect, "L");
    std::ostringstream out;
    write_comparison_csv(rows, out);
    EXPECT_EQ(out.str().substr(0, 16), "method,precision");
    MethodRuns single{"x", {run(0.1)}, 0, 0};
    EXPECT_THROW(aggregate_runs({single}), ContractViolation);
}
