#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "csv.hpp"
#include "error.hpp"
#include "rng.hpp"
#include "telemetry.hpp"

namespace ubalance::synth {

// Behaviour archetypes: certain/uncertain x safe/unsafe.
enum Archetype : int { kCertainSafe = 0, kUncertainSafe = 1, kCertainUnsafe = 2, kUncertainUnsafe = 3 };

inline const char* archetype_name(int a) {
    static constexpr const char* names[] = {"certain_safe", "uncertain_safe", "certain_unsafe", "uncertain_unsafe"};
    return names[a];
}

struct GenConfig {
    int n_flights = 200;
    int flight_length = 500;
    int background_obstacles = 3;  // per flight, kept clear of the path
    double imbalance_ratio = 46.0;  // target safe:unsafe windows
    std::array<double, 4> archetype_weights{0.9, 0.1, 0.15, 0.85};
    double speed = 0.5;  // metres per step
    double heading_noise = 0.02;
    double position_noise = 0.02;
    double altitude = 10.0;
    double oscillation_min = 0.6;  // heading excursion during erratic episodes, rad
    double oscillation_max = 1.0;
    double safe_clearance_m = 2.5;
    // Share of certain-safe flights that pass an obstacle at 1.7-2.5 m with the
    // same slowdown as a real encounter. Uncertain-safe flights always do.
    double near_miss_rate = 0.2;
    LabelingRules rules;
    std::uint64_t seed = 7;

    bool wants_unsafe() const { return archetype_weights[kCertainUnsafe] + archetype_weights[kUncertainUnsafe] > 0.0; }
    bool wants_safe() const { return archetype_weights[kCertainSafe] + archetype_weights[kUncertainSafe] > 0.0; }

    int windows_per_flight() const {
        if (flight_length < rules.window_length) return 0;
        return (flight_length - rules.window_length) / rules.stride + 1;
    }

    void validate() const {
        if (n_flights < 1) throw ConfigError("n_flights must be >= 1");
        if (flight_length < 200) throw ConfigError("flight_length must be >= 200 samples");
        if (background_obstacles < 0) throw ConfigError("background_obstacles must be >= 0");
        if (!(imbalance_ratio >= 1.0)) throw ConfigError("imbalance_ratio must be >= 1");
        double sum = 0.0;
        for (double w : archetype_weights) {
            if (w < 0.0) throw ConfigError("archetype weights must be non-negative");
            sum += w;
        }
        if (!(sum > 0.0)) throw ConfigError("archetype weights must not all be zero");
        if (!(speed > 0.0) || heading_noise < 0.0 || position_noise < 0.0) throw ConfigError("invalid kinematic noise settings");
        if (near_miss_rate < 0.0 || near_miss_rate > 1.0) throw ConfigError("near_miss_rate must be in [0, 1]");
        if (!(oscillation_min > 0.0) || oscillation_max < oscillation_min) throw ConfigError("oscillation range must satisfy 0 < min <= max");
        if (rules.window_length < 1 || rules.stride < 1) throw ConfigError("window length and stride must be positive");
        if (wants_unsafe() && wants_safe()) {
            const double target_unsafe = static_cast<double>(n_flights) * windows_per_flight() / (imbalance_ratio + 1.0);
            if (target_unsafe < 1.0)
                throw ConfigError("imbalance ratio is infeasible: fewer than one unsafe window expected for " +
                                  std::to_string(n_flights) + " flights");
            // An encounter yields at most ~3 unsafe windows per flight.
            const double max_fraction = 3.0 / windows_per_flight();
            if (1.0 / (imbalance_ratio + 1.0) > max_fraction)
                throw ConfigError("imbalance ratio is infeasible: unsafe encounters cannot cover that many windows");
        }
    }
};

struct GenReport {
    // counts[safety][uncertainty]
    std::array<std::array<std::size_t, 2>, 2> counts{};
    std::array<std::size_t, 4> flights_per_archetype{};
    double realized_ratio = std::numeric_limits<double>::infinity();  // safe / unsafe windows
    std::uint64_t seed = 0;
    // Flights whose rule-based labels disagree with the generator's intent.
    std::size_t unsafe_intent_without_unsafe_window = 0;
    std::size_t safe_intent_with_unsafe_window = 0;
    std::size_t uncertain_intent_without_uncertain_window = 0;
    std::size_t certain_intent_with_uncertain_window = 0;

    std::size_t total() const { return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1]; }
    std::size_t unsafe() const { return counts[1][0] + counts[1][1]; }
    std::size_t safe() const { return counts[0][0] + counts[0][1]; }
};

struct GeneratedFlight {
    Flight flight;
    int archetype = kCertainSafe;
    std::vector<Window> windows;  // rule-labelled
};

struct Generated {
    std::vector<GeneratedFlight> flights;
    GenReport report;

    std::vector<Flight> plain_flights() const {
        std::vector<Flight> out;
        for (const auto& f : flights) out.push_back(f.flight);
        return out;
    }
    std::vector<Window> windows() const {
        std::vector<Window> out;
        for (const auto& f : flights) out.insert(out.end(), f.windows.begin(), f.windows.end());
        return out;
    }
};

namespace detail {

struct Episode {
    int start = 0;
    int end = 0;  // exclusive
    double amplitude = 0.0;
    int period = 1;  // steps between sign changes
};

inline Eigen::Vector3d position_of(const TelemetrySample& s) { return {s.x, s.y, s.z}; }

inline double path_clearance(const std::vector<Eigen::Vector3d>& path, const Obstacle& o) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : path) best = std::min(best, o.surface_distance(p));
    return best;
}

inline Flight make_flight(const GenConfig& cfg, int archetype, const std::string& id, Rng& rng) {
    const int L = cfg.flight_length;
    const bool unsafe = archetype == kCertainUnsafe || archetype == kUncertainUnsafe;

    // Nominal heading: piecewise-constant turn rate.
    std::vector<double> nominal(static_cast<std::size_t>(L));
    double heading = rng.uniform(-std::numbers::pi, std::numbers::pi);
    double rate = 0.0;
    int next_change = 0;
    for (int t = 0; t < L; ++t) {
        if (t == next_change) {
            rate = rng.uniform(-0.015, 0.015);
            next_change = t + 60 + static_cast<int>(rng.below(100));
        }
        heading += rate;
        nominal[static_cast<std::size_t>(t)] = heading;
    }

    const bool near_miss = archetype == kUncertainSafe || (archetype == kCertainSafe && rng.uniform() < cfg.near_miss_rate);
    const bool approach = unsafe || near_miss;
    const int encounter = approach ? 100 + static_cast<int>(rng.below(static_cast<std::uint64_t>(L - 200))) : -1;

    std::vector<Episode> episodes;
    if (archetype == kUncertainUnsafe || archetype == kUncertainSafe) {
        // Erratic heading brackets the close approach.
        const int before = 20 + static_cast<int>(rng.below(30));
        const int after = 20 + static_cast<int>(rng.below(30));
        episodes.push_back({std::max(0, encounter - before), std::min(L, encounter + after), rng.uniform(cfg.oscillation_min, cfg.oscillation_max),
                            1 + static_cast<int>(rng.below(2))});
    }

    std::vector<double> actual = nominal;
    for (const auto& e : episodes) {
        for (int t = e.start; t < e.end; ++t) {
            const double sign = ((t - e.start) / e.period) % 2 == 0 ? 1.0 : -1.0;
            actual[static_cast<std::size_t>(t)] += sign * e.amplitude;
        }
    }

    // Kinematics: the vehicle slows down and sinks a little around an encounter.
    std::vector<Eigen::Vector3d> path(static_cast<std::size_t>(L));
    Eigen::Vector3d pos(rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0), cfg.altitude + rng.uniform(-2.0, 2.0));
    const double slow = approach ? rng.uniform(0.55, 0.8) : 1.0;
    const double dip = approach ? rng.uniform(0.0, 0.6) : 0.0;
    for (int t = 0; t < L; ++t) {
        double v = cfg.speed * (1.0 + 0.05 * rng.normal());
        double climb = 0.002 * rng.normal();
        if (approach) {
            const double d = (t - encounter) / 15.0;
            const double bump = std::exp(-d * d);
            v *= 1.0 - (1.0 - slow) * bump;
            climb -= dip * bump * (t < encounter ? 0.04 : -0.04);
        }
        const double dir = actual[static_cast<std::size_t>(t)];
        pos += Eigen::Vector3d(v * std::cos(dir), v * std::sin(dir), climb);
        path[static_cast<std::size_t>(t)] = pos;
    }

    Flight flight;
    flight.flight_id = id;

    if (approach) {
        const auto& p = path[static_cast<std::size_t>(encounter)];
        const double h = nominal[static_cast<std::size_t>(encounter)];
        const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
        const Eigen::Vector3d normal(-std::sin(h) * side, std::cos(h) * side, 0.0);
        const double radius = rng.uniform(1.5, 3.0);
        const double clearance = unsafe ? rng.uniform(0.2, 1.0) : rng.uniform(1.7, 2.5);
        Obstacle o = Obstacle::sphere(p + normal * (radius + clearance), radius);
        // Oscillation can swing the path toward the sphere; a near miss must stay clear.
        for (int k = 0; k < 10 && !unsafe; ++k) {
            const double gap = clearance - path_clearance(path, o);
            if (gap <= 0.0) break;
            o.center += normal * (gap + 0.01);
        }
        flight.obstacles.push_back(o);
    }

    // Background clutter, never closer than safe_clearance_m + 0.5 to the path.
    for (int k = 0; k < cfg.background_obstacles; ++k) {
        for (int attempt = 0; attempt < 20; ++attempt) {
            const auto& anchor = path[rng.below(static_cast<std::uint64_t>(L))];
            const double ang = rng.uniform(-std::numbers::pi, std::numbers::pi);
            const double dist = rng.uniform(6.0, 20.0);
            const Eigen::Vector3d c = anchor + Eigen::Vector3d(dist * std::cos(ang), dist * std::sin(ang), rng.uniform(-2.0, 2.0));
            const Obstacle o = rng.uniform() < 0.5
                                   ? Obstacle::sphere(c, rng.uniform(1.0, 3.0))
                                   : Obstacle::box(c, Eigen::Vector3d(rng.uniform(0.5, 2.5), rng.uniform(0.5, 2.5), rng.uniform(1.0, 4.0)));
            if (path_clearance(path, o) >= cfg.safe_clearance_m + 0.5) {
                flight.obstacles.push_back(o);
                break;
            }
        }
    }

    flight.samples.reserve(static_cast<std::size_t>(L));
    for (int t = 0; t < L; ++t) {
        const auto& p = path[static_cast<std::size_t>(t)];
        TelemetrySample s;
        s.t = t;
        s.r = wrap_angle(actual[static_cast<std::size_t>(t)] + cfg.heading_noise * rng.normal());
        s.x = p.x() + cfg.position_noise * rng.normal();
        s.y = p.y() + cfg.position_noise * rng.normal();
        s.z = p.z() + cfg.position_noise * rng.normal();
        flight.samples.push_back(s);
    }
    return flight;
}

}  // namespace detail

// Generates flights one at a time. Whether the next flight carries an
// obstacle encounter is decided by the running unsafe-window deficit against
// the target ratio, so the realized ratio tracks the target; the archetype
// within the safe or unsafe group is drawn from the class-mix weights. All
// labels come from the rule-based labelers.
inline Generated generate(const GenConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, "synth.schedule"));
    Generated out;
    out.report.seed = cfg.seed;
    const double target_fraction = 1.0 / (cfg.imbalance_ratio + 1.0);
    const double per_flight = cfg.windows_per_flight();
    std::size_t unsafe_so_far = 0;

    for (int i = 0; i < cfg.n_flights; ++i) {
        bool unsafe;
        if (!cfg.wants_unsafe()) unsafe = false;
        else if (!cfg.wants_safe()) unsafe = true;
        else unsafe = static_cast<double>(unsafe_so_far) + 1.0 <= target_fraction * per_flight * (i + 1);

        const auto& w = cfg.archetype_weights;
        int archetype;
        if (unsafe) archetype = kCertainUnsafe + static_cast<int>(rng.categorical({w[kCertainUnsafe], w[kUncertainUnsafe]}));
        else archetype = static_cast<int>(rng.categorical({w[kCertainSafe], w[kUncertainSafe]}));

        char id[32];
        std::snprintf(id, sizeof(id), "f%05d", i);
        Rng flight_rng(derive_seed(cfg.seed, std::string("synth.flight.") + id));
        GeneratedFlight gf;
        gf.archetype = archetype;
        gf.flight = detail::make_flight(cfg, archetype, id, flight_rng);
        gf.windows = label_windows(gf.flight, cfg.rules);

        std::size_t n_unsafe = 0, n_uncertain = 0;
        for (const auto& win : gf.windows) {
            ++out.report.counts[static_cast<std::size_t>(win.safety_label)][static_cast<std::size_t>(win.uncertainty_label)];
            n_unsafe += static_cast<std::size_t>(win.safety_label);
            n_uncertain += static_cast<std::size_t>(win.uncertainty_label);
        }
        unsafe_so_far += n_unsafe;
        ++out.report.flights_per_archetype[static_cast<std::size_t>(archetype)];
        const bool want_unsafe = archetype == kCertainUnsafe || archetype == kUncertainUnsafe;
        const bool want_uncertain = archetype == kUncertainSafe || archetype == kUncertainUnsafe;
        if (want_unsafe && n_unsafe == 0) ++out.report.unsafe_intent_without_unsafe_window;
        if (!want_unsafe && n_unsafe > 0) ++out.report.safe_intent_with_unsafe_window;
        if (want_uncertain && n_uncertain == 0) ++out.report.uncertain_intent_without_uncertain_window;
        if (!want_uncertain && n_uncertain > 0) ++out.report.certain_intent_with_uncertain_window;
        out.flights.push_back(std::move(gf));
    }
    if (out.report.unsafe() > 0)
        out.report.realized_ratio = static_cast<double>(out.report.safe()) / static_cast<double>(out.report.unsafe());
    return out;
}

inline void write_report(const GenReport& r, std::ostream& out) {
    out << "seed=" << r.seed << '\n';
    out << "windows=" << r.total() << '\n';
    out << "safe_certain=" << r.counts[0][0] << '\n';
    out << "safe_uncertain=" << r.counts[0][1] << '\n';
    out << "unsafe_certain=" << r.counts[1][0] << '\n';
    out << "unsafe_uncertain=" << r.counts[1][1] << '\n';
    out << "realized_ratio=" << csv::format_double(r.realized_ratio) << '\n';
    for (int a = 0; a < 4; ++a) out << "flights_" << archetype_name(a) << '=' << r.flights_per_archetype[static_cast<std::size_t>(a)] << '\n';
    out << "mismatch_unsafe_intent=" << r.unsafe_intent_without_unsafe_window << '\n';
    out << "mismatch_safe_intent=" << r.safe_intent_with_unsafe_window << '\n';
    out << "mismatch_uncertain_intent=" << r.uncertain_intent_without_uncertain_window << '\n';
    out << "mismatch_certain_intent=" << r.certain_intent_with_uncertain_window << '\n';
}

}  // namespace ubalance::synth
