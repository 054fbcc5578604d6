#include <gtest/gtest.h>

#include <cmath>

#include "ubalance/metrics.hpp"
#include "ubalance/synthgen.hpp"

using namespace ubalance;
using namespace ubalance::synth;

namespace {

GenConfig small(int flights, std::uint64_t seed = 3) {
    GenConfig c;
    c.n_flights = flights;
    c.flight_length = 250;
    c.seed = seed;
    return c;
}

}  // namespace

TEST(Synth, CertainSafeOnly) {
    auto c = small(30);
    c.archetype_weights = {1, 0, 0, 0};
    const auto g = generate(c);
    EXPECT_EQ(g.report.flights_per_archetype[kCertainSafe], 30u);
    for (const auto& w : g.windows()) {
        EXPECT_EQ(w.safety_label, 0) << w.window_id;
        EXPECT_EQ(w.uncertainty_label, 0) << w.window_id;
    }
}

TEST(Synth, UnsafeOnlyFlightsHitObstacles) {
    auto c = small(20);
    c.archetype_weights = {0, 0, 1, 0};
    const auto g = generate(c);
    EXPECT_EQ(g.report.unsafe_intent_without_unsafe_window, 0u);
    for (const auto& f : g.flights) {
        int unsafe = 0;
        for (const auto& w : f.windows) unsafe += w.safety_label;
        EXPECT_GE(unsafe, 1) << f.flight.flight_id;
    }
}

TEST(Synth, LabelsComeFromTheRules) {
    const auto g = generate(small(25));
    for (const auto& f : g.flights) {
        const auto relabelled = label_windows(f.flight, LabelingRules{});
        ASSERT_EQ(relabelled.size(), f.windows.size());
        for (std::size_t i = 0; i < f.windows.size(); ++i) {
            EXPECT_EQ(relabelled[i].safety_label, f.windows[i].safety_label);
            EXPECT_EQ(relabelled[i].uncertainty_label, f.windows[i].uncertainty_label);
        }
    }
}

TEST(Synth, RatioNearTarget) {
    // 200 flights x 10 windows = 2000 windows, target 46:1.
    auto c = small(200);
    c.flight_length = 250;
    const auto g = generate(c);
    EXPECT_EQ(g.report.total(), 2000u);
    EXPECT_GE(g.report.realized_ratio, 40.0);
    EXPECT_LE(g.report.realized_ratio, 52.0);
}

TEST(Synth, UncertaintyCorrelatesWithSafety) {
    GenConfig c;
    c.n_flights = 150;
    const auto ws = generate(c).windows();
    std::vector<double> u;
    std::vector<int> s;
    for (const auto& w : ws) {
        u.push_back(w.uncertainty_label);
        s.push_back(w.safety_label);
    }
    const auto r = metrics::point_biserial(u, s);
    EXPECT_GT(r.r, 0.2);
    EXPECT_LT(r.p_value, 0.05);
}

TEST(Synth, Deterministic) {
    const auto a = generate(small(15, 9)), b = generate(small(15, 9)), d = generate(small(15, 10));
    ASSERT_EQ(a.flights.size(), b.flights.size());
    for (std::size_t i = 0; i < a.flights.size(); ++i) {
        const auto& fa = a.flights[i].flight.samples;
        const auto& fb = b.flights[i].flight.samples;
        ASSERT_EQ(fa.size(), fb.size());
        for (std::size_t k = 0; k < fa.size(); ++k) {
            EXPECT_EQ(fa[k].x, fb[k].x);
            EXPECT_EQ(fa[k].r, fb[k].r);
        }
    }
    EXPECT_NE(a.flights[0].flight.samples[100].x, d.flights[0].flight.samples[100].x);
}

TEST(Synth, InfeasibleConfigurationsRejected) {
    auto c = small(1);
    c.imbalance_ratio = 1000;
    EXPECT_THROW(generate(c), ConfigError);
    c = small(10);
    c.imbalance_ratio = 1.0;
    EXPECT_THROW(generate(c), ConfigError);
    c = small(10);
    c.archetype_weights = {0, 0, 0, 0};
    EXPECT_THROW(generate(c), ConfigError);
    c = small(10);
    c.flight_length = 100;
    EXPECT_THROW(generate(c), ConfigError);
}
