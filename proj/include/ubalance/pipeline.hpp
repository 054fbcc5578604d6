#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_set>
#include <vector>

#include "config.hpp"
#include "csv.hpp"
#include "error.hpp"
#include "features.hpp"
#include "metrics.hpp"
#include "model_io.hpp"
#include "rebalance.hpp"
#include "rng.hpp"
#include "safety_predictor.hpp"
#include "synthgen.hpp"
#include "telemetry.hpp"
#include "ulnr.hpp"
#include "uncertainty_predictor.hpp"

namespace ubalance {

inline constexpr const char* kToolVersion = "0.1.0";

// Key-value manifest, one `key=value` per line, in insertion order.
class Manifest {
public:
    void set(const std::string& key, const std::string& value) {
        for (auto& [k, v] : entries_)
            if (k == key) {
                v = value;
                return;
            }
        entries_.emplace_back(key, value);
    }
    void set(const std::string& key, double value) { set(key, csv::format_double(value)); }
    void set(const std::string& key, std::size_t value) { set(key, std::to_string(value)); }

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    std::optional<std::string> get(const std::string& key) const {
        for (const auto& [k, v] : entries_)
            if (k == key) return v;
        return std::nullopt;
    }

    void write(const std::filesystem::path& file) const {
        std::ofstream out(file);
        if (!out) throw IoError("cannot write " + file.string());
        for (const auto& [k, v] : entries_) out << k << '=' << v << '\n';
    }

    static Manifest read(const std::filesystem::path& file) {
        std::ifstream in(file);
        if (!in) throw IoError("cannot open " + file.string());
        Manifest m;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (csv::trim(line).empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ParseError(file.string(), lineno, "expected key=value");
            m.entries_.emplace_back(line.substr(0, eq), line.substr(eq + 1));
        }
        return m;
    }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

inline Manifest run_manifest(const RunConfig& cfg, const std::string& command, std::uint64_t seed) {
    Manifest m;
    m.set("tool", std::string("ubalance"));
    m.set("version", std::string(kToolVersion));
    m.set("command", command);
    m.set("config_hash", config_hash(cfg));
    m.set("seed", std::to_string(seed));
    m.set("profile", cfg.profile);
    m.set("model_format_version", std::to_string(nn::kModelFormatVersion));
    return m;
}

// Creates `dir`, refusing to reuse a non-empty directory unless forced.
inline void prepare_output_dir(const std::filesystem::path& dir, bool force) {
    namespace fs = std::filesystem;
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw IoError(dir.string() + " exists and is not a directory");
        if (!fs::is_empty(dir) && !force)
            throw ConfigError("refusing to write into non-empty directory " + dir.string() + " (use --force)");
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

// ============================================================================
// Benchmark on disk
// ============================================================================
//   flights/<id>.csv, flights/<id>.obstacles.csv
//   windows.csv         raw labelled windows, dataset order
//   split.csv           window_id,split
//   channel_stats.csv   channel,mean,std (training split only)
//   manifest.txt

inline void write_split_csv(const DatasetSplit& split, std::ostream& out) {
    out << "window_id,split\n";
    for (const auto& w : split.train) out << w.window_id << ",train\n";
    for (const auto& w : split.validation) out << w.window_id << ",val\n";
    for (const auto& w : split.test) out << w.window_id << ",test\n";
}

inline void write_channel_stats(const ChannelStats& s, std::ostream& out) {
    out << "channel,mean,std\n";
    static constexpr const char* names[] = {"r", "x", "y", "z"};
    for (std::size_t c = 0; c < s.channels(); ++c)
        out << (c < 4 ? names[c] : std::to_string(c)) << ',' << csv::format_double(s.mean[c]) << ','
            << csv::format_double(s.stddev[c]) << '\n';
}

inline synth::Generated make_benchmark(const RunConfig& cfg, const std::filesystem::path& dir, bool force) {
    namespace fs = std::filesystem;
    prepare_output_dir(dir, force);
    auto generated = synth::generate(cfg.gen);
    const auto flights_dir = dir / "flights";
    fs::create_directories(flights_dir);
    for (const auto& f : generated.flights) write_flight(f.flight, flights_dir);
    const auto windows = generated.windows();
    write_windows_csv(windows, dir / "windows.csv");
    const auto split = split_sequential(windows);
    {
        std::ofstream out(dir / "split.csv");
        if (!out) throw IoError("cannot write split.csv");
        write_split_csv(split, out);
    }
    {
        std::ofstream out(dir / "channel_stats.csv");
        if (!out) throw IoError("cannot write channel_stats.csv");
        write_channel_stats(fit_channel_stats(split.train), out);
    }
    auto m = run_manifest(cfg, "gen", cfg.gen.seed);
    const auto& r = generated.report;
    m.set("flights", static_cast<std::size_t>(cfg.gen.n_flights));
    m.set("windows", r.total());
    m.set("safe_certain", r.counts[0][0]);
    m.set("safe_uncertain", r.counts[0][1]);
    m.set("unsafe_certain", r.counts[1][0]);
    m.set("unsafe_uncertain", r.counts[1][1]);
    m.set("realized_ratio", r.realized_ratio);
    m.set("train_windows", split.train.size());
    m.set("val_windows", split.validation.size());
    m.set("test_windows", split.test.size());
    for (int a = 0; a < 4; ++a)
        m.set(std::string("flights_") + synth::archetype_name(a), r.flights_per_archetype[static_cast<std::size_t>(a)]);
    m.set("mismatch_unsafe_intent", r.unsafe_intent_without_unsafe_window);
    m.set("mismatch_safe_intent", r.safe_intent_with_unsafe_window);
    m.set("mismatch_uncertain_intent", r.uncertain_intent_without_uncertain_window);
    m.set("mismatch_certain_intent", r.certain_intent_with_uncertain_window);
    m.write(dir / "manifest.txt");
    return generated;
}

// Reads windows.csv and split.csv. Without split.csv the windows are split
// sequentially 8:1:1.
inline DatasetSplit load_benchmark(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("benchmark directory not found: " + dir.string());
    const auto windows = read_windows_csv(dir / "windows.csv");
    const auto split_file = dir / "split.csv";
    if (!fs::exists(split_file)) return split_sequential(windows);

    std::ifstream in(split_file);
    if (!in) throw IoError("cannot open " + split_file.string());
    std::string line;
    std::getline(in, line);
    if (csv::trim(line) != "window_id,split") throw ParseError(split_file.string(), 1, "expected header window_id,split");
    std::map<std::string, std::string> part;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (csv::trim(line).empty()) continue;
        const auto f = csv::split(csv::trim(line));
        if (f.size() != 2 || (f[1] != "train" && f[1] != "val" && f[1] != "test"))
            throw ParseError(split_file.string(), lineno, "expected <window_id>,{train,val,test}");
        part[std::string(f[0])] = std::string(f[1]);
    }
    DatasetSplit split;
    for (const auto& w : windows) {
        const auto it = part.find(w.window_id);
        if (it == part.end()) throw ParseError(split_file.string(), lineno, "window " + w.window_id + " has no split");
        if (it->second == "train") split.train.push_back(w);
        else if (it->second == "val") split.validation.push_back(w);
        else split.test.push_back(w);
    }
    return split;
}

// ============================================================================
// Leakage guard
// ============================================================================

// Remembers which window ids belong to the training split. Statistics that
// feed training (channel standardization, the safe-set mean and std behind
// uLNR z-scores) may only be fitted through this guard.
class TrainingScope {
public:
    explicit TrainingScope(const std::vector<Window>& train) {
        for (const auto& w : train) ids_.insert(w.window_id);
    }

    bool contains(const std::string& id) const { return ids_.count(id) != 0; }

    void require_training(const std::vector<Window>& windows, const char* what) const {
        for (const auto& w : windows)
            if (!contains(w.window_id))
                throw ContractViolation(std::string("leakage guard: ") + what + " would use non-training window " + w.window_id);
    }

    ChannelStats channel_stats(const std::vector<Window>& windows) const {
        require_training(windows, "channel statistics");
        return fit_channel_stats(windows);
    }

    ulnr::RelabelResult relabel(const std::vector<Window>& windows, const std::vector<double>& scores, double tau,
                                std::uint64_t seed) const {
        require_training(windows, "uLNR safe-set statistics");
        return ulnr::relabel(windows, scores, tau, seed);
    }

private:
    std::unordered_set<std::string> ids_;
};

// ============================================================================
// Stages
// ============================================================================

struct PreparedData {
    DatasetSplit raw;
    DatasetSplit standardized;
    ChannelStats stats;
};

inline PreparedData prepare(const DatasetSplit& split) {
    if (split.train.empty()) throw ConfigError("training split is empty");
    TrainingScope scope(split.train);
    PreparedData d;
    d.raw = split;
    d.stats = scope.channel_stats(split.train);
    d.standardized.train = standardize_all(split.train, d.stats);
    d.standardized.validation = standardize_all(split.validation, d.stats);
    d.standardized.test = standardize_all(split.test, d.stats);
    return d;
}

struct UncertaintyStage {
    UncertaintyModel model;
    std::vector<EpochLog> log;
    int best_epoch = 0;
    std::vector<double> train_scores, val_scores, test_scores;
};

inline UncertaintyStage run_uncertainty(const PreparedData& data, const RunConfig& cfg, std::uint64_t seed) {
    auto fit = train_uncertainty(data.standardized.train, data.standardized.validation, cfg.uncertainty, seed);
    UncertaintyStage s{std::move(fit.model), std::move(fit.log), fit.best_epoch, {}, {}, {}};
    s.train_scores = score_all(s.model, data.standardized.train);
    s.val_scores = score_all(s.model, data.standardized.validation);
    s.test_scores = score_all(s.model, data.standardized.test);
    return s;
}

struct TauTrial {
    double tau = 0.0;
    std::size_t labels_flipped = 0;
    double val_f1 = 0.0;
};

struct StrategyOutcome {
    Strategy strategy = Strategy::none;
    Fusion fusion = Fusion::plain;
    std::optional<double> tau;
    std::vector<TauTrial> tau_trials;
    std::optional<ulnr::RebalanceReport> relabel;
    SafetyModel model;
    int best_epoch = 0;
    double val_f1 = 0.0;
    std::size_t train_windows = 0;
    std::vector<double> test_probabilities;
    metrics::RunMetrics test;
    double latency_s = 0.0;
};

namespace detail {

struct SafetyFit {
    TrainResult<SafetyModel> fit;
    double val_f1 = 0.0;
};

inline SafetyFit fit_safety(const std::vector<Window>& train, const std::vector<double>& train_scores,
                            const std::vector<double>& weights, const PreparedData& data, const UncertaintyStage& u,
                            const RunConfig& cfg, std::uint64_t seed) {
    auto fit = train_safety(train, data.standardized.validation, cfg.safety, train_scores, u.val_scores, weights,
                            derive_seed(seed, "safety"));
    const auto fused = cfg.safety.model.fusion != Fusion::plain;
    double val_f1 = 0.0;
    if (!data.standardized.validation.empty()) {
        const auto probs = sigmoid_all(fit.model.logits(
            SequenceSet::from_windows(data.standardized.validation, fused ? u.val_scores : std::vector<double>{})));
        val_f1 = metrics::f1_score(probs, safety_labels(data.standardized.validation));
    }
    return {std::move(fit), val_f1};
}

}  // namespace detail

// Trains the safety predictor under one rebalancing strategy and scores it
// on the test split. With tune_tau, uLNR tries every tau in the grid and
// keeps the one with the best validation F1 (earliest on ties).
inline StrategyOutcome run_strategy(const PreparedData& data, const UncertaintyStage& u, const RunConfig& cfg,
                                    Strategy strategy, std::uint64_t seed) {
    const auto& train = data.standardized.train;
    TrainingScope scope(train);
    std::vector<Window> train_set = train;
    std::vector<double> train_scores = u.train_scores;
    std::vector<double> weights;
    StrategyOutcome out;
    out.strategy = strategy;
    out.fusion = cfg.safety.model.fusion;
    std::optional<detail::SafetyFit> fitted;

    switch (strategy) {
        case Strategy::none: break;
        case Strategy::class_weight: weights = sample_weights(safety_labels(train), class_weights(safety_labels(train))); break;
        case Strategy::random_undersample: {
            // Undersample indices so the matching scores follow the windows.
            std::vector<Window> tagged = train;
            for (std::size_t i = 0; i < tagged.size(); ++i) tagged[i].window_id = std::to_string(i);
            Rng rng(derive_seed(seed, "rus"));
            const auto kept = random_undersample(tagged, cfg.rus_ratio, rng);
            train_set.clear();
            train_scores.clear();
            for (const auto& w : kept) {
                const auto i = static_cast<std::size_t>(std::stoull(w.window_id));
                train_set.push_back(train[i]);
                train_scores.push_back(u.train_scores[i]);
            }
            break;
        }
        case Strategy::ulnr: {
            const std::vector<double> taus = cfg.tune_tau ? cfg.tau_grid : std::vector<double>{cfg.tau};
            const auto relabel_seed = derive_seed(seed, "ulnr.relabel");
            for (double tau : taus) {
                auto res = scope.relabel(train, u.train_scores, tau, relabel_seed);
                auto fit = detail::fit_safety(res.windows, u.train_scores, {}, data, u, cfg, seed);
                out.tau_trials.push_back({tau, res.report.labels_flipped, fit.val_f1});
                if (!fitted || fit.val_f1 > fitted->val_f1) {
                    fitted = std::move(fit);
                    out.tau = tau;
                    out.relabel = std::move(res.report);
                    train_set = std::move(res.windows);
                }
            }
            break;
        }
    }
    if (!fitted) fitted = detail::fit_safety(train_set, train_scores, weights, data, u, cfg, seed);
    out.train_windows = train_set.size();
    out.best_epoch = fitted->fit.best_epoch;
    out.val_f1 = fitted->val_f1;
    out.model = std::move(fitted->fit.model);

    const bool fused = out.fusion != Fusion::plain;
    const auto pred = predict_all(out.model, data.standardized.test, fused ? u.test_scores : std::vector<double>{});
    out.test_probabilities = pred.probabilities;
    out.latency_s = pred.mean_latency_s;
    out.test = metrics::evaluate_run(pred.probabilities, safety_labels(data.standardized.test));
    return out;
}

// ============================================================================
// Output tables
// ============================================================================

inline void write_metrics_header(std::ostream& out) {
    out << "config_hash,seed,strategy,fusion,tau,train_windows,tp,fp,fn,tn,precision,recall,f1,params\n";
}

// Deterministic columns only; latency goes to the efficiency table.
inline void write_metrics_row(std::ostream& out, const std::string& hash, std::uint64_t seed, const StrategyOutcome& o) {
    const auto& c = o.test.counts;
    out << hash << ',' << seed << ',' << to_string(o.strategy) << ',' << to_string(o.fusion) << ','
        << (o.tau ? csv::format_double(*o.tau) : "") << ',' << o.train_windows << ',' << c.tp << ',' << c.fp << ','
        << c.fn << ',' << c.tn << ',' << csv::format_fixed(o.test.precision, 6) << ','
        << csv::format_fixed(o.test.recall, 6) << ',' << csv::format_fixed(o.test.f1, 6) << ','
        << o.model.parameter_count() << '\n';
}

inline void write_scores_csv(const PreparedData& d, const UncertaintyStage& u, std::ostream& out) {
    out << "window_id,split,safety,uncertainty,score\n";
    auto emit = [&](const std::vector<Window>& ws, const std::vector<double>& s, const char* name) {
        for (std::size_t i = 0; i < ws.size(); ++i)
            out << ws[i].window_id << ',' << name << ',' << ws[i].safety_label << ',' << ws[i].uncertainty_label << ','
                << csv::format_double(s[i]) << '\n';
    };
    emit(d.standardized.train, u.train_scores, "train");
    emit(d.standardized.validation, u.val_scores, "val");
    emit(d.standardized.test, u.test_scores, "test");
}

inline std::vector<double> read_scores_csv(const std::filesystem::path& file, const std::vector<Window>& windows) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    std::string line;
    std::getline(in, line);
    if (csv::trim(line) != "window_id,split,safety,uncertainty,score")
        throw ParseError(file.string(), 1, "expected header window_id,split,safety,uncertainty,score");
    std::map<std::string, double> by_id;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (csv::trim(line).empty()) continue;
        const auto f = csv::split(csv::trim(line));
        const auto v = f.size() == 5 ? csv::parse_double(f[4]) : std::nullopt;
        if (!v) throw ParseError(file.string(), lineno, "malformed score row");
        by_id[std::string(f[0])] = *v;
    }
    std::vector<double> out;
    out.reserve(windows.size());
    for (const auto& w : windows) {
        const auto it = by_id.find(w.window_id);
        if (it == by_id.end()) throw ConfigError("no uncertainty score for window " + w.window_id + " in " + file.string());
        out.push_back(it->second);
    }
    return out;
}

// ============================================================================
// End-to-end runs
// ============================================================================

struct PipelineResult {
    UncertaintyStage uncertainty;
    StrategyOutcome outcome;
    metrics::Correlation correlation;  // test-split scores vs safety labels
};

// gen output -> uncertainty model -> scores -> rebalance -> safety model ->
// test metrics. Writes every artifact under `out`.
inline PipelineResult run_pipeline(const RunConfig& cfg, const std::filesystem::path& data_dir,
                                   const std::filesystem::path& out, bool force) {
    prepare_output_dir(out, force);
    const auto data = prepare(load_benchmark(data_dir));
    const auto hash = config_hash(cfg);
    PipelineResult r{run_uncertainty(data, cfg, derive_seed(cfg.seed, "uncertainty")), {}, {}};
    r.outcome = run_strategy(data, r.uncertainty, cfg, cfg.strategy, cfg.seed);
    r.correlation = metrics::point_biserial(r.uncertainty.test_scores, safety_labels(data.standardized.test));

    nn::save_model(r.uncertainty.model.to_file(), out / "uncertainty.model");
    nn::save_model(r.outcome.model.to_file(data.stats), out / "safety.model");
    {
        std::ofstream f(out / "scores.csv");
        write_scores_csv(data, r.uncertainty, f);
    }
    if (r.outcome.relabel) {
        std::ofstream f(out / "relabel_report.csv");
        ulnr::write_report_csv(*r.outcome.relabel, f);
        std::ofstream s(out / "relabel_summary.json");
        ulnr::write_report_summary(*r.outcome.relabel, s);
    }
    {
        std::ofstream f(out / "metrics.csv");
        if (!f) throw IoError("cannot write metrics.csv");
        write_metrics_header(f);
        write_metrics_row(f, hash, cfg.seed, r.outcome);
    }
    {
        std::ofstream f(out / "efficiency.csv");
        f << "config_hash,seed,strategy,params,latency_ms\n";
        f << hash << ',' << cfg.seed << ',' << to_string(r.outcome.strategy) << ',' << r.outcome.model.parameter_count()
          << ',' << csv::format_fixed(r.outcome.latency_s * 1e3, 4) << '\n';
    }
    {
        std::ofstream f(out / "config.ini");
        f << canonical_config(cfg);
    }
    auto m = run_manifest(cfg, "pipeline", cfg.seed);
    m.set("data_dir", data_dir.string());
    m.set("strategy", to_string(cfg.strategy));
    m.set("fusion", to_string(cfg.safety.model.fusion));
    if (r.outcome.tau) m.set("tau", *r.outcome.tau);
    m.set("point_biserial_r", r.correlation.r);
    m.set("point_biserial_p", r.correlation.p_value);
    m.set("test_f1", r.outcome.test.f1);
    m.write(out / "manifest.txt");
    return r;
}

struct EvaluationResult {
    std::vector<metrics::MethodRuns> methods;
    std::vector<metrics::ComparisonRow> rows;
    std::vector<std::uint64_t> seeds;
    std::vector<metrics::Correlation> correlations;  // one per seed
};

using EvaluationProgress = std::function<void(std::uint64_t seed, const StrategyOutcome&)>;

// eval_seeds runs of every strategy. Run i uses seed cfg.seed + i; the
// uncertainty model is shared by all strategies of a run. The first strategy
// is the reference for the p and A12 columns.
inline EvaluationResult evaluate_strategies(const RunConfig& cfg, const DatasetSplit& split,
                                            const EvaluationProgress& progress = {}) {
    const auto data = prepare(split);
    EvaluationResult res;
    for (auto s : cfg.eval_strategies) res.methods.push_back({to_string(s), {}, 0, 0.0});
    std::vector<double> latency(cfg.eval_strategies.size(), 0.0);
    for (int i = 0; i < cfg.eval_seeds; ++i) {
        const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(i);
        res.seeds.push_back(seed);
        const auto u = run_uncertainty(data, cfg, derive_seed(seed, "uncertainty"));
        res.correlations.push_back(metrics::point_biserial(u.test_scores, safety_labels(data.standardized.test)));
        for (std::size_t k = 0; k < cfg.eval_strategies.size(); ++k) {
            const auto o = run_strategy(data, u, cfg, cfg.eval_strategies[k], seed);
            res.methods[k].runs.push_back(o.test);
            res.methods[k].params = o.model.parameter_count();
            latency[k] += o.latency_s;
            if (progress) progress(seed, o);
        }
    }
    for (std::size_t k = 0; k < res.methods.size(); ++k) res.methods[k].latency_s = latency[k] / cfg.eval_seeds;
    res.rows = metrics::aggregate_runs(res.methods);
    return res;
}

}  // namespace ubalance
