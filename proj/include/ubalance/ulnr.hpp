#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "csv.hpp"
#include "error.hpp"
#include "rng.hpp"
#include "telemetry.hpp"

namespace ubalance::ulnr {

inline constexpr double kEpsilon = 1e-8;
inline constexpr double kDefaultTau = 3.0;

inline const std::vector<double>& default_tau_sweep() {
    static const std::vector<double> taus{0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5};
    return taus;
}

struct SafeSetStats {
    double mean = 0.0;
    double stddev = 0.0;  // population
    double epsilon = kEpsilon;
    std::size_t safe_count = 0;
};

struct ZScores {
    SafeSetStats stats;
    std::vector<double> z;  // one per window, safe and unsafe alike
};

// mu and sigma come from the safe-labelled windows only; z is then computed
// for every window as (u - mu) / (sigma + eps).
inline ZScores zscore(const std::vector<double>& scores, const std::vector<int>& labels, double epsilon = kEpsilon) {
    if (scores.size() != labels.size()) throw ContractViolation("zscore: scores and labels are misaligned");
    ZScores out;
    out.stats.epsilon = epsilon;
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 0) continue;
        sum += scores[i];
        ++out.stats.safe_count;
    }
    if (out.stats.safe_count == 0) throw ConfigError("uLNR needs at least one safe window");
    const double n = static_cast<double>(out.stats.safe_count);
    out.stats.mean = sum / n;
    double ss = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (labels[i] == 0) ss += (scores[i] - out.stats.mean) * (scores[i] - out.stats.mean);
    out.stats.stddev = std::sqrt(ss / n);
    out.z.reserve(scores.size());
    for (double u : scores) out.z.push_back((u - out.stats.mean) / (out.stats.stddev + epsilon));
    return out;
}

// Shifted tanh: max(tanh(z - tau), 0) for safe windows, 0 for unsafe ones.
inline double flip_probability(double z, int label, double tau) {
    if (label != 0) return 0.0;
    return std::max(std::tanh(z - tau), 0.0);
}

struct FlipRecord {
    std::string window_id;
    int original_label = 0;
    double z = 0.0;
    double p_flip = 0.0;
    bool flipped = false;
    int new_label = 0;
};

struct RebalanceReport {
    std::vector<FlipRecord> records;
    SafeSetStats stats;
    double tau = kDefaultTau;
    std::uint64_t seed = 0;
    std::size_t total = 0;
    std::size_t unsafe_before = 0;
    std::size_t labels_flipped = 0;
    double flip_ratio = 0.0;            // labels_flipped / total
    double final_minority_ratio = 0.0;  // unsafe after / total
    double expected_flips = 0.0;        // sum of p_flip
};

struct RelabelResult {
    std::vector<Window> windows;
    RebalanceReport report;
};

// Draws one uniform per safe window, in dataset order, and flips the window
// to unsafe when the draw is below its flip probability. Unsafe windows never
// change and the input is left untouched.
inline RelabelResult relabel(const std::vector<Window>& windows, const std::vector<double>& scores, double tau,
                             std::uint64_t seed) {
    if (windows.size() != scores.size()) throw ContractViolation("relabel: one score per window is required");
    if (!std::isfinite(tau)) throw ConfigError("flip threshold must be finite");
    const auto labels = safety_labels(windows);
    const auto zs = zscore(scores, labels);
    Rng rng(seed);
    RelabelResult out{windows, {}};
    auto& rep = out.report;
    rep.stats = zs.stats;
    rep.tau = tau;
    rep.seed = seed;
    rep.total = windows.size();
    rep.records.reserve(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
        FlipRecord r;
        r.window_id = windows[i].window_id;
        r.original_label = labels[i];
        r.z = zs.z[i];
        r.p_flip = flip_probability(r.z, r.original_label, tau);
        if (r.original_label == 0) {
            const double xi = rng.uniform();
            r.flipped = xi < r.p_flip;
        }
        r.new_label = r.flipped ? 1 : r.original_label;
        out.windows[i].safety_label = r.new_label;
        if (r.original_label == 1) ++rep.unsafe_before;
        if (r.flipped) ++rep.labels_flipped;
        rep.expected_flips += r.p_flip;
        rep.records.push_back(std::move(r));
    }
    const double total = static_cast<double>(rep.total);
    rep.flip_ratio = static_cast<double>(rep.labels_flipped) / total;
    rep.final_minority_ratio = static_cast<double>(rep.unsafe_before + rep.labels_flipped) / total;
    return out;
}

inline void write_report_csv(const RebalanceReport& rep, std::ostream& out) {
    out << "window_id,orig_label,z,p_flip,flipped,new_label\n";
    for (const auto& r : rep.records)
        out << r.window_id << ',' << r.original_label << ',' << csv::format_double(r.z) << ','
            << csv::format_double(r.p_flip) << ',' << (r.flipped ? 1 : 0) << ',' << r.new_label << '\n';
}

// Key-value summary written next to the per-window CSV.
inline void write_report_summary(const RebalanceReport& rep, std::ostream& out) {
    out << "{\n";
    out << "  \"tau\": " << csv::format_double(rep.tau) << ",\n";
    out << "  \"seed\": " << rep.seed << ",\n";
    out << "  \"safe_mean\": " << csv::format_double(rep.stats.mean) << ",\n";
    out << "  \"safe_std\": " << csv::format_double(rep.stats.stddev) << ",\n";
    out << "  \"epsilon\": " << csv::format_double(rep.stats.epsilon) << ",\n";
    out << "  \"total\": " << rep.total << ",\n";
    out << "  \"unsafe_before\": " << rep.unsafe_before << ",\n";
    out << "  \"labels_flipped\": " << rep.labels_flipped << ",\n";
    out << "  \"flip_ratio\": " << csv::format_double(rep.flip_ratio) << ",\n";
    out << "  \"final_minority_ratio\": " << csv::format_double(rep.final_minority_ratio) << ",\n";
    out << "  \"expected_flips\": " << csv::format_double(rep.expected_flips) << "\n";
    out << "}\n";
}

// ============================================================================
// Flip-threshold sweep
// ============================================================================
struct SweepRow {
    double tau = 0.0;
    std::uint64_t seed = 0;
    std::size_t labels_flipped = 0;
    double flip_ratio = 0.0;
    double final_ratio = 0.0;
};

struct SweepTable {
    std::vector<SweepRow> per_seed;
    std::vector<SweepRow> mean;  // one per tau; labels_flipped rounded, ratios averaged
    std::vector<double> mean_flipped;
};

inline SweepTable sweep_tau(const std::vector<Window>& windows, const std::vector<double>& scores,
                            const std::vector<double>& taus, const std::vector<std::uint64_t>& seeds) {
    if (taus.empty()) throw ConfigError("sweep_tau needs at least one threshold");
    if (seeds.empty()) throw ConfigError("sweep_tau needs at least one seed");
    SweepTable table;
    for (double tau : taus) {
        double flipped = 0.0, flip_ratio = 0.0, final_ratio = 0.0;
        for (auto seed : seeds) {
            const auto res = relabel(windows, scores, tau, seed);
            const auto& rep = res.report;
            table.per_seed.push_back({tau, seed, rep.labels_flipped, rep.flip_ratio, rep.final_minority_ratio});
            flipped += static_cast<double>(rep.labels_flipped);
            flip_ratio += rep.flip_ratio;
            final_ratio += rep.final_minority_ratio;
        }
        const double k = static_cast<double>(seeds.size());
        table.mean_flipped.push_back(flipped / k);
        table.mean.push_back({tau, 0, static_cast<std::size_t>(std::llround(flipped / k)), flip_ratio / k, final_ratio / k});
    }
    return table;
}

// Columns follow the flip-threshold ablation table: threshold, labels
// flipped, flip ratio, final minority ratio. `seed` is "mean" for the
// averaged rows.
inline void write_sweep_csv(const SweepTable& t, std::ostream& out) {
    out << "tau,seed,labels_flipped,flip_ratio,final_ratio\n";
    for (const auto& r : t.per_seed)
        out << csv::format_double(r.tau) << ',' << r.seed << ',' << r.labels_flipped << ','
            << csv::format_double(r.flip_ratio) << ',' << csv::format_double(r.final_ratio) << '\n';
    for (std::size_t i = 0; i < t.mean.size(); ++i)
        out << csv::format_double(t.mean[i].tau) << ",mean," << csv::format_double(t.mean_flipped[i]) << ','
            << csv::format_double(t.mean[i].flip_ratio) << ',' << csv::format_double(t.mean[i].final_ratio) << '\n';
}

}  // namespace ubalance::ulnr
