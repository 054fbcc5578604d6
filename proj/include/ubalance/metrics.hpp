#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "csv.hpp"
#include "error.hpp"

namespace ubalance::metrics {

// Unsafe (label 1) is the positive class.
struct ConfusionCounts {
    long tp = 0;
    long tn = 0;
    long fp = 0;
    long fn = 0;

    long total() const { return tp + tn + fp + fn; }
};

struct PRF1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

inline double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

// Every 0/0 is reported as 0.
inline PRF1 prf1(const ConfusionCounts& c) {
    PRF1 r;
    r.precision = safe_ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
    r.recall = safe_ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
    r.f1 = safe_ratio(2.0 * r.precision * r.recall, r.precision + r.recall);
    return r;
}

inline int hard_label(double probability, double threshold = 0.5) { return probability >= threshold ? 1 : 0; }

inline ConfusionCounts confusion(const std::vector<int>& predicted, const std::vector<int>& actual) {
    if (predicted.size() != actual.size()) throw ContractViolation("confusion: prediction/label length mismatch");
    ConfusionCounts c;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const bool p = predicted[i] != 0;
        const bool a = actual[i] != 0;
        if (p && a) ++c.tp;
        else if (!p && !a) ++c.tn;
        else if (p) ++c.fp;
        else ++c.fn;
    }
    return c;
}

struct RunMetrics {
    ConfusionCounts counts;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Thresholds probabilities at 0.5 and scores them against 0/1 labels.
inline RunMetrics evaluate_run(const std::vector<double>& probabilities, const std::vector<int>& labels) {
    if (probabilities.size() != labels.size()) throw ContractViolation("evaluate_run: length mismatch");
    std::vector<int> predicted;
    predicted.reserve(probabilities.size());
    for (double p : probabilities) predicted.push_back(hard_label(p));
    RunMetrics m;
    m.counts = confusion(predicted, labels);
    const auto s = prf1(m.counts);
    m.precision = s.precision;
    m.recall = s.recall;
    m.f1 = s.f1;
    return m;
}

inline double f1_score(const std::vector<double>& probabilities, const std::vector<int>& labels) {
    return evaluate_run(probabilities, labels).f1;
}

// ============================================================================
// Point-biserial correlation
// ============================================================================
struct Correlation {
    double r = 0.0;
    double p_value = 1.0;
};

// Pearson correlation between scores and 0/1 labels, with a two-sided p-value
// from Student's t on n-2 degrees of freedom.
inline Correlation point_biserial(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ContractViolation("point_biserial: length mismatch");
    const auto n = scores.size();
    if (n < 3) throw UndefinedCorrelation("point_biserial needs at least 3 observations");
    const double nd = static_cast<double>(n);
    double mean_s = 0.0, mean_l = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_s += scores[i];
        mean_l += labels[i];
    }
    mean_s /= nd;
    mean_l /= nd;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double ds = scores[i] - mean_s;
        const double dl = labels[i] - mean_l;
        sxy += ds * dl;
        sxx += ds * ds;
        syy += dl * dl;
    }
    if (syy == 0.0) throw UndefinedCorrelation("point_biserial: labels contain a single class");
    if (sxx == 0.0) throw UndefinedCorrelation("point_biserial: scores have zero variance");
    Correlation c;
    c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    const double df = nd - 2.0;
    if (std::abs(c.r) >= 1.0) {
        c.p_value = 0.0;
    } else {
        const double t = c.r * std::sqrt(df / (1.0 - c.r * c.r));
        boost::math::students_t dist(df);
        c.p_value = std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))), 0.0, 1.0);
    }
    return c;
}

// ============================================================================
// Mann-Whitney U and the Vargha-Delaney A12 effect size
// ============================================================================
struct StatTestResult {
    double statistic = 0.0;  // U of the first sample
    double p_value = 1.0;
    double a12 = 0.5;
    bool exact = false;
};

// P(first > second) + 0.5 P(tie) over all cross pairs.
inline double vargha_delaney_a12(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) throw ContractViolation("A12 needs two non-empty samples");
    double wins = 0.0;
    for (double x : a)
        for (double y : b) wins += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
    return wins / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

// N / S / M / L by |A12 - 0.5| + 0.5 against 0.56, 0.64, 0.71.
inline std::string effect_label(double a12) {
    const double m = std::abs(a12 - 0.5) + 0.5;
    if (m < 0.56) return "N";
    if (m < 0.64) return "S";
    if (m < 0.71) return "M";
    return "L";
}

namespace detail {

// Null distribution of U for sizes (n1, n2): counts[u] for u in [0, n1*n2],
// via the recurrence c(n1, n2, u) = c(n1-1, n2, u-n2) + c(n1, n2-1, u).
inline std::vector<double> u_null_counts(std::size_t n1, std::size_t n2) {
    // table[j] holds the distribution for (i, j) while sweeping i upward.
    std::vector<std::vector<double>> prev(n2 + 1), cur(n2 + 1);
    for (std::size_t j = 0; j <= n2; ++j) prev[j] = {1.0};  // i = 0: U is always 0
    for (std::size_t i = 1; i <= n1; ++i) {
        cur[0] = {1.0};
        for (std::size_t j = 1; j <= n2; ++j) {
            std::vector<double> dist(i * j + 1, 0.0);
            // last element from the second sample: contributes nothing to U
            for (std::size_t u = 0; u < cur[j - 1].size(); ++u) dist[u] += cur[j - 1][u];
            // last element from the first sample: it exceeds all j second-sample elements
            for (std::size_t u = 0; u < prev[j].size(); ++u) dist[u + j] += prev[j][u];
            cur[j] = std::move(dist);
        }
        std::swap(prev, cur);
    }
    return prev[n2];
}

inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace detail

inline constexpr std::size_t kExactMannWhitneyMax = 8;

// Two-sided Mann-Whitney U test. Tie-free samples with both sizes <= 8 use the
// exact null distribution; otherwise the tie-corrected normal approximation
// with continuity correction.
inline StatTestResult mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) throw ContractViolation("mann_whitney_u needs two non-empty samples");
    const std::size_t n1 = a.size(), n2 = b.size(), n = n1 + n2;

    std::vector<std::pair<double, int>> pooled;
    pooled.reserve(n);
    for (double x : a) pooled.emplace_back(x, 0);
    for (double y : b) pooled.emplace_back(y, 1);
    std::sort(pooled.begin(), pooled.end(), [](const auto& l, const auto& r) { return l.first < r.first; });

    double rank_sum_a = 0.0;
    double tie_term = 0.0;
    bool has_ties = false;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && pooled[j].first == pooled[i].first) ++j;
        const double t = static_cast<double>(j - i);
        const double mid_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k)
            if (pooled[k].second == 0) rank_sum_a += mid_rank;
        if (t > 1.0) {
            has_ties = true;
            tie_term += t * t * t - t;
        }
        i = j;
    }

    const double n1d = static_cast<double>(n1), n2d = static_cast<double>(n2), nd = static_cast<double>(n);
    StatTestResult res;
    res.statistic = rank_sum_a - n1d * (n1d + 1.0) / 2.0;
    res.a12 = res.statistic / (n1d * n2d);

    if (!has_ties && n1 <= kExactMannWhitneyMax && n2 <= kExactMannWhitneyMax) {
        const auto counts = detail::u_null_counts(n1, n2);
        const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
        const auto u = static_cast<std::size_t>(std::llround(res.statistic));
        double lower = 0.0, upper = 0.0;
        for (std::size_t k = 0; k < counts.size(); ++k) {
            if (k <= u) lower += counts[k];
            if (k >= u) upper += counts[k];
        }
        res.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / total);
        res.exact = true;
        return res;
    }

    const double mu = n1d * n2d / 2.0;
    const double var = n1d * n2d / 12.0 * ((nd + 1.0) - tie_term / (nd * (nd - 1.0)));
    if (var <= 0.0) {
        res.p_value = 1.0;
        return res;
    }
    const double z = std::max(std::abs(res.statistic - mu) - 0.5, 0.0) / std::sqrt(var);
    res.p_value = std::min(1.0, 2.0 * detail::normal_sf(z));
    return res;
}

// ============================================================================
// Multi-run aggregation
// ============================================================================
struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation (n - 1)
};

inline MeanStd mean_std(const std::vector<double>& v) {
    if (v.empty()) return {};
    MeanStd m;
    m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - m.mean) * (x - m.mean);
        m.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return m;
}

struct MethodRuns {
    std::string method;
    std::vector<RunMetrics> runs;
    std::size_t params = 0;
    double latency_s = 0.0;
};

struct ComparisonRow {
    std::string method;
    MeanStd precision, recall, f1;
    std::optional<double> p_value;  // empty for the reference method
    std::optional<double> a12;
    std::string effect;
    std::size_t params = 0;
    double latency_s = 0.0;
};

// The first method is the reference; every other row carries the
// Mann-Whitney p and A12(reference, method) computed on per-run F1.
inline std::vector<ComparisonRow> aggregate_runs(const std::vector<MethodRuns>& methods) {
    if (methods.empty()) throw ContractViolation("aggregate_runs: no methods");
    for (const auto& m : methods)
        if (m.runs.size() < 2) throw ContractViolation("aggregate_runs: method '" + m.method + "' has fewer than 2 runs");
    auto column = [](const MethodRuns& m, double RunMetrics::*field) {
        std::vector<double> out;
        for (const auto& r : m.runs) out.push_back(r.*field);
        return out;
    };
    const auto ref_f1 = column(methods.front(), &RunMetrics::f1);
    std::vector<ComparisonRow> rows;
    for (std::size_t i = 0; i < methods.size(); ++i) {
        const auto& m = methods[i];
        ComparisonRow row;
        row.method = m.method;
        row.precision = mean_std(column(m, &RunMetrics::precision));
        row.recall = mean_std(column(m, &RunMetrics::recall));
        const auto f1 = column(m, &RunMetrics::f1);
        row.f1 = mean_std(f1);
        if (i > 0) {
            const auto test = mann_whitney_u(ref_f1, f1);
            row.p_value = test.p_value;
            row.a12 = test.a12;
            row.effect = effect_label(test.a12);
        }
        row.params = m.params;
        row.latency_s = m.latency_s;
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void write_comparison_csv(const std::vector<ComparisonRow>& rows, std::ostream& out, bool include_latency = true) {
    out << "method,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std,p_value,a12,effect_label,params,latency_s\n";
    auto f = [](double v) { return csv::format_fixed(v, 6); };
    for (const auto& r : rows) {
        out << r.method << ',' << f(r.precision.mean) << ',' << f(r.precision.std) << ',' << f(r.recall.mean) << ','
            << f(r.recall.std) << ',' << f(r.f1.mean) << ',' << f(r.f1.std) << ',';
        out << (r.p_value ? csv::format_double(*r.p_value) : "") << ',';
        out << (r.a12 ? f(*r.a12) : "") << ',' << r.effect << ',' << r.params << ',';
        out << (include_latency ? csv::format_fixed(r.latency_s, 9) : "") << '\n';
    }
}

}  // namespace ubalance::metrics
