#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "csv.hpp"
#include "error.hpp"

namespace ubalance {

inline constexpr int kWindowLength = 25;
inline constexpr int kChannels = 4;

// Channel order inside every window matrix.
enum Channel : int { kHeading = 0, kX = 1, kY = 2, kZ = 3 };

struct TelemetrySample {
    std::int64_t t = 0;
    double r = 0.0;  // heading, radians
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

enum class ObstacleShape { sphere, box };

struct Obstacle {
    ObstacleShape shape = ObstacleShape::sphere;
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    // sphere: (radius, unused, unused); box: half-extents
    Eigen::Vector3d size = Eigen::Vector3d::Zero();

    static Obstacle sphere(const Eigen::Vector3d& c, double radius) {
        return {ObstacleShape::sphere, c, Eigen::Vector3d(radius, 0.0, 0.0)};
    }
    static Obstacle box(const Eigen::Vector3d& c, const Eigen::Vector3d& half_extents) {
        return {ObstacleShape::box, c, half_extents};
    }

    // Distance from p to the obstacle surface; 0 when p is on or inside it.
    double surface_distance(const Eigen::Vector3d& p) const {
        if (shape == ObstacleShape::sphere) return std::max((p - center).norm() - size[0], 0.0);
        const Eigen::Vector3d outside = ((p - center).cwiseAbs() - size).cwiseMax(0.0);
        return outside.norm();
    }
};

struct Flight {
    std::string flight_id;
    std::vector<TelemetrySample> samples;
    std::vector<Obstacle> obstacles;
};

using WindowValues = Eigen::MatrixXd;  // rows = timesteps, cols = channels (r, x, y, z)

struct Window {
    std::string window_id;
    WindowValues values;
    int safety_label = 0;       // 0 safe, 1 unsafe
    int uncertainty_label = 0;  // 0 certain, 1 uncertain
};

struct DatasetSplit {
    std::vector<Window> train;
    std::vector<Window> validation;
    std::vector<Window> test;
};

// ============================================================================
// Flight files
// ============================================================================

namespace detail {

inline std::vector<Obstacle> read_obstacles(const std::filesystem::path& file) {
    std::vector<Obstacle> out;
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    std::string line;
    std::size_t lineno = 0;
    const std::string name = file.string();
    if (!std::getline(in, line)) return out;
    ++lineno;
    if (csv::trim(line) != "shape,cx,cy,cz,p1,p2,p3")
        throw ParseError(name, lineno, "expected header shape,cx,cy,cz,p1,p2,p3");
    while (std::getline(in, line)) {
        ++lineno;
        if (csv::trim(line).empty()) continue;
        const auto fields = csv::split(line);
        if (fields.size() != 7) throw ParseError(name, lineno, "expected 7 columns, got " + std::to_string(fields.size()));
        std::array<double, 6> v{};
        for (std::size_t i = 0; i < 6; ++i) {
            const auto parsed = csv::parse_double(fields[i + 1]);
            if (!parsed || !std::isfinite(*parsed)) throw ParseError(name, lineno, "non-numeric or non-finite value");
            v[i] = *parsed;
        }
        const auto shape = csv::trim(fields[0]);
        const Eigen::Vector3d c(v[0], v[1], v[2]);
        if (shape == "sphere") {
            out.push_back(Obstacle::sphere(c, v[3]));
        } else if (shape == "box") {
            out.push_back(Obstacle::box(c, Eigen::Vector3d(v[3], v[4], v[5])));
        } else {
            throw ParseError(name, lineno, "unknown obstacle shape '" + std::string(shape) + "'");
        }
    }
    return out;
}

inline std::vector<TelemetrySample> read_samples(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    const std::string name = file.string();
    std::vector<TelemetrySample> samples;
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw ParseError(name, 1, "missing header");
    ++lineno;
    if (csv::trim(line) != "t,r,x,y,z") throw ParseError(name, lineno, "expected header t,r,x,y,z");
    while (std::getline(in, line)) {
        ++lineno;
        if (csv::trim(line).empty()) continue;
        const auto fields = csv::split(line);
        if (fields.size() != 5) throw ParseError(name, lineno, "expected 5 columns, got " + std::to_string(fields.size()));
        const auto t = csv::parse_int(fields[0]);
        if (!t) throw ParseError(name, lineno, "timestep is not an integer");
        TelemetrySample s;
        s.t = *t;
        double* dst[4] = {&s.r, &s.x, &s.y, &s.z};
        for (int i = 0; i < 4; ++i) {
            const auto v = csv::parse_double(fields[i + 1]);
            if (!v || !std::isfinite(*v)) throw ParseError(name, lineno, "non-numeric or non-finite value");
            *dst[i] = *v;
        }
        samples.push_back(s);
    }
    std::stable_sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
    for (std::size_t i = 1; i < samples.size(); ++i)
        if (samples[i].t == samples[i - 1].t)
            throw ParseError(name, 0, "duplicate timestep " + std::to_string(samples[i].t));
    return samples;
}

}  // namespace detail

inline std::filesystem::path obstacle_sidecar(const std::filesystem::path& flight_csv) {
    auto p = flight_csv;
    p.replace_extension(".obstacles.csv");
    return p;
}

// Reads every `<id>.csv` flight in a directory, with obstacles from the
// optional `<id>.obstacles.csv` sidecar. Flights are returned sorted by id.
inline std::vector<Flight> load_flights(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(dir)) throw IoError("no such directory: " + dir.string());
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
        if (name.ends_with(".obstacles.csv")) continue;
        files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Flight> flights;
    flights.reserve(files.size());
    for (const auto& f : files) {
        Flight flight;
        flight.flight_id = f.stem().string();
        flight.samples = detail::read_samples(f);
        const auto side = obstacle_sidecar(f);
        if (fs::exists(side)) flight.obstacles = detail::read_obstacles(side);
        flights.push_back(std::move(flight));
    }
    return flights;
}

inline void write_flight(const Flight& flight, const std::filesystem::path& dir) {
    const auto file = dir / (flight.flight_id + ".csv");
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    out << "t,r,x,y,z\n";
    for (const auto& s : flight.samples)
        out << s.t << ',' << csv::format_double(s.r) << ',' << csv::format_double(s.x) << ','
            << csv::format_double(s.y) << ',' << csv::format_double(s.z) << '\n';
    std::ofstream obs(obstacle_sidecar(file));
    if (!obs) throw IoError("cannot write obstacles for " + flight.flight_id);
    obs << "shape,cx,cy,cz,p1,p2,p3\n";
    for (const auto& o : flight.obstacles) {
        obs << (o.shape == ObstacleShape::sphere ? "sphere" : "box");
        for (int i = 0; i < 3; ++i) obs << ',' << csv::format_double(o.center[i]);
        for (int i = 0; i < 3; ++i) obs << ',' << csv::format_double(o.size[i]);
        obs << '\n';
    }
}

// ============================================================================
// Windowing and rule-based labels
// ============================================================================

// Consecutive segments [k*stride, k*stride + n); trailing partial segments
// are dropped. Labels are left at 0.
inline std::vector<Window> window_flight(const Flight& flight, int n = kWindowLength, int stride = kWindowLength) {
    if (n < 1 || stride < 1) throw ConfigError("window length and stride must be positive");
    std::vector<Window> out;
    const auto len = static_cast<long long>(flight.samples.size());
    for (long long start = 0, k = 0; start + n <= len; start += stride, ++k) {
        Window w;
        w.window_id = flight.flight_id + "#" + std::to_string(k);
        w.values.resize(n, kChannels);
        for (int i = 0; i < n; ++i) {
            const auto& s = flight.samples[static_cast<std::size_t>(start + i)];
            w.values(i, kHeading) = s.r;
            w.values(i, kX) = s.x;
            w.values(i, kY) = s.y;
            w.values(i, kZ) = s.z;
        }
        out.push_back(std::move(w));
    }
    return out;
}

inline double min_surface_distance(const WindowValues& values, const std::vector<Obstacle>& obstacles) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        const Eigen::Vector3d p(values(i, kX), values(i, kY), values(i, kZ));
        for (const auto& o : obstacles) best = std::min(best, o.surface_distance(p));
    }
    return best;
}

// 1 iff some sample lies strictly closer than threshold_m to an obstacle surface.
inline int label_safety(const WindowValues& values, const std::vector<Obstacle>& obstacles, double threshold_m = 1.5) {
    return min_surface_distance(values, obstacles) < threshold_m ? 1 : 0;
}

// Wraps an angle difference into (-pi, pi].
inline double wrap_angle(double a) {
    double w = std::remainder(a, 2.0 * std::numbers::pi);
    if (w <= -std::numbers::pi) w += 2.0 * std::numbers::pi;
    return w;
}

// Number of sign alternations between consecutive heading changes whose
// magnitude exceeds heading_delta_rad. Smaller changes are skipped.
inline int count_heading_reversals(const WindowValues& values, double heading_delta_rad) {
    int reversals = 0;
    int last_sign = 0;
    for (Eigen::Index i = 1; i < values.rows(); ++i) {
        const double d = wrap_angle(values(i, kHeading) - values(i - 1, kHeading));
        if (std::abs(d) <= heading_delta_rad) continue;
        const int sign = d > 0 ? 1 : -1;
        if (last_sign != 0 && sign != last_sign) ++reversals;
        last_sign = sign;
    }
    return reversals;
}

inline int label_uncertainty(const WindowValues& values, double heading_delta_rad = 0.3, int min_reversals = 3) {
    if (!(heading_delta_rad > 0.0) || min_reversals < 1)
        throw ConfigError("uncertainty rule needs heading_delta_rad > 0 and min_reversals >= 1");
    return count_heading_reversals(values, heading_delta_rad) >= min_reversals ? 1 : 0;
}

struct LabelingRules {
    int window_length = kWindowLength;
    int stride = kWindowLength;
    double safety_threshold_m = 1.5;
    double heading_delta_rad = 0.3;
    int min_reversals = 3;
};

// Windows every flight in order and labels each window from its own samples.
inline std::vector<Window> label_windows(const Flight& flight, const LabelingRules& rules) {
    auto windows = window_flight(flight, rules.window_length, rules.stride);
    for (auto& w : windows) {
        w.safety_label = label_safety(w.values, flight.obstacles, rules.safety_threshold_m);
        w.uncertainty_label = label_uncertainty(w.values, rules.heading_delta_rad, rules.min_reversals);
    }
    return windows;
}

inline std::vector<Window> label_windows(const std::vector<Flight>& flights, const LabelingRules& rules) {
    std::vector<Window> out;
    for (const auto& f : flights) {
        auto ws = label_windows(f, rules);
        out.insert(out.end(), std::make_move_iterator(ws.begin()), std::make_move_iterator(ws.end()));
    }
    return out;
}

// ============================================================================
// Splitting and standardization
// ============================================================================

// Sequential split: the first floor(a/(a+b+c) * n) windows train, the next
// floor(b/(a+b+c) * n) validate, the rest test. Input order is kept.
inline DatasetSplit split_sequential(const std::vector<Window>& windows, std::array<int, 3> ratios = {8, 1, 1}) {
    const auto n = windows.size();
    if (n < 3) throw ConfigError("need at least 3 windows to split, got " + std::to_string(n));
    if (ratios[0] <= 0 || ratios[1] <= 0 || ratios[2] <= 0) throw ConfigError("split ratios must be positive");
    const std::size_t total = static_cast<std::size_t>(ratios[0] + ratios[1] + ratios[2]);
    const std::size_t n_train = n * static_cast<std::size_t>(ratios[0]) / total;
    const std::size_t n_val = n * static_cast<std::size_t>(ratios[1]) / total;
    DatasetSplit split;
    split.train.assign(windows.begin(), windows.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.validation.assign(windows.begin() + static_cast<std::ptrdiff_t>(n_train),
                            windows.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    split.test.assign(windows.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), windows.end());
    return split;
}

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;  // population; may be 0

    double scale(std::size_t c) const { return stddev[c] > 0.0 ? stddev[c] : 1.0; }
    std::size_t channels() const { return mean.size(); }
};

// Per-channel population mean and std over every timestep of every window.
// Callers pass the training split only.
inline ChannelStats fit_channel_stats(const std::vector<Window>& train) {
    if (train.empty()) throw ConfigError("cannot fit channel statistics on an empty training set");
    const auto channels = static_cast<std::size_t>(train.front().values.cols());
    ChannelStats stats{std::vector<double>(channels, 0.0), std::vector<double>(channels, 0.0)};
    double count = 0.0;
    for (const auto& w : train) {
        require(static_cast<std::size_t>(w.values.cols()) == channels, "windows disagree on channel count");
        for (std::size_t c = 0; c < channels; ++c) stats.mean[c] += w.values.col(static_cast<Eigen::Index>(c)).sum();
        count += static_cast<double>(w.values.rows());
    }
    for (auto& m : stats.mean) m /= count;
    for (const auto& w : train)
        for (std::size_t c = 0; c < channels; ++c)
            stats.stddev[c] += (w.values.col(static_cast<Eigen::Index>(c)).array() - stats.mean[c]).square().sum();
    for (auto& s : stats.stddev) s = std::sqrt(s / count);
    return stats;
}

inline WindowValues standardize(const WindowValues& values, const ChannelStats& stats) {
    require(static_cast<std::size_t>(values.cols()) == stats.channels(), "channel count does not match stats");
    WindowValues out(values.rows(), values.cols());
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
        const auto cc = static_cast<std::size_t>(c);
        out.col(c) = (values.col(c).array() - stats.mean[cc]) / stats.scale(cc);
    }
    return out;
}

inline std::vector<Window> standardize_all(std::vector<Window> windows, const ChannelStats& stats) {
    for (auto& w : windows) w.values = standardize(w.values, stats);
    return windows;
}

// ============================================================================
// Windowed dataset file: window_id,safety,uncertainty,c0..c{N*C-1}, row-major
// ============================================================================

inline void write_windows_csv(const std::vector<Window>& windows, std::ostream& out) {
    const Eigen::Index rows = windows.empty() ? kWindowLength : windows.front().values.rows();
    const Eigen::Index cols = windows.empty() ? kChannels : windows.front().values.cols();
    out << "window_id,safety,uncertainty";
    for (Eigen::Index i = 0; i < rows * cols; ++i) out << ",c" << i;
    out << '\n';
    for (const auto& w : windows) {
        require(w.values.rows() == rows && w.values.cols() == cols, "windows of mixed shape");
        out << w.window_id << ',' << w.safety_label << ',' << w.uncertainty_label;
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index c = 0; c < cols; ++c) out << ',' << csv::format_double(w.values(i, c));
        out << '\n';
    }
}

inline void write_windows_csv(const std::vector<Window>& windows, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    write_windows_csv(windows, out);
}

inline std::vector<Window> read_windows_csv(const std::filesystem::path& file, int channels = kChannels) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    const std::string name = file.string();
    std::string line;
    if (!std::getline(in, line)) throw ParseError(name, 1, "missing header");
    const auto header = csv::split(csv::trim(line));
    if (header.size() < 4 || header[0] != "window_id" || header[1] != "safety" || header[2] != "uncertainty")
        throw ParseError(name, 1, "expected header window_id,safety,uncertainty,c0..");
    const auto n_values = header.size() - 3;
    if (n_values % static_cast<std::size_t>(channels) != 0)
        throw ParseError(name, 1, "value count is not a multiple of the channel count");
    const auto rows = static_cast<Eigen::Index>(n_values / static_cast<std::size_t>(channels));
    std::vector<Window> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (csv::trim(line).empty()) continue;
        const auto f = csv::split(csv::trim(line));
        if (f.size() != header.size()) throw ParseError(name, lineno, "wrong column count");
        Window w;
        w.window_id = std::string(f[0]);
        const auto s = csv::parse_int(f[1]);
        const auto u = csv::parse_int(f[2]);
        if (!s || !u || (*s != 0 && *s != 1) || (*u != 0 && *u != 1)) throw ParseError(name, lineno, "labels must be 0 or 1");
        w.safety_label = static_cast<int>(*s);
        w.uncertainty_label = static_cast<int>(*u);
        w.values.resize(rows, channels);
        for (Eigen::Index i = 0; i < rows * channels; ++i) {
            const auto v = csv::parse_double(f[static_cast<std::size_t>(3 + i)]);
            if (!v || !std::isfinite(*v)) throw ParseError(name, lineno, "non-numeric or non-finite value");
            w.values(i / channels, i % channels) = *v;
        }
        out.push_back(std::move(w));
    }
    return out;
}

inline std::vector<int> safety_labels(const std::vector<Window>& windows) {
    std::vector<int> out;
    out.reserve(windows.size());
    for (const auto& w : windows) out.push_back(w.safety_label);
    return out;
}

}  // namespace ubalance
