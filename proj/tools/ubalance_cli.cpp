#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "ubalance/gradcheck.hpp"
#include "ubalance/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ubalance;

namespace {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kConfig = 2,
    kIo = 3,
    kTraining = 4,
    kParse = 5,
    kCheckFailed = 6,
};

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<double> tau;
    std::string strategy;
    std::string fusion;
    std::string profile;
    std::string out;
    std::string data;
    bool force = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_data = true) {
    cmd->add_option("--config", c.config, "INI config file");
    cmd->add_option("--seed", c.seed, "master seed");
    cmd->add_option("--profile", c.profile, "paper or desk");
    cmd->add_option("--out", c.out, "output directory");
    cmd->add_flag("--force", c.force, "overwrite a non-empty output directory");
    if (with_data) cmd->add_option("--data", c.data, "benchmark directory written by `gen`");
}

void add_training(CLI::App* cmd, Common& c) {
    cmd->add_option("--tau", c.tau, "uLNR flip threshold");
    cmd->add_option("--strategy", c.strategy, "none, ulnr, cw or rus");
    cmd->add_option("--fusion", c.fusion, "plain, early or late");
}

RunConfig resolve(const Common& c) {
    RunConfig cfg;
    if (!c.config.empty()) cfg = load_config(c.config, c.profile);
    else if (!c.profile.empty()) apply_profile(cfg, c.profile);
    if (c.seed) cfg.seed = *c.seed;
    if (c.tau) cfg.tau = *c.tau;
    if (!c.strategy.empty()) cfg.strategy = parse_strategy(c.strategy);
    if (!c.fusion.empty()) cfg.safety.model.fusion = parse_fusion(c.fusion);
    if (!c.data.empty()) cfg.data_dir = c.data;
    if (!c.out.empty()) cfg.out_dir = c.out;
    cfg.validate();
    return cfg;
}

fs::path output_dir(const RunConfig& cfg, const std::string& command) {
    if (!cfg.out_dir.empty()) return cfg.out_dir;
    if (const char* root = std::getenv("UBALANCE_OUT"); root && *root) return fs::path(root) / command;
    return fs::path("ubalance_out") / command;
}

fs::path data_dir(const RunConfig& cfg) {
    if (cfg.data_dir.empty()) throw IoError("no benchmark directory given (use --data or run.data_dir)");
    return cfg.data_dir;
}

void write_text(const fs::path& file, const std::string& text) {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    out << text;
}

// Uncertainty scores for every window of the benchmark, from a scores file
// when given, otherwise from a freshly trained model.
UncertaintyStage scores_for(const PreparedData& data, const RunConfig& cfg, const std::string& scores_file) {
    if (scores_file.empty()) return run_uncertainty(data, cfg, derive_seed(cfg.seed, "uncertainty"));
    UncertaintyStage s;
    s.train_scores = read_scores_csv(scores_file, data.standardized.train);
    s.val_scores = read_scores_csv(scores_file, data.standardized.validation);
    s.test_scores = read_scores_csv(scores_file, data.standardized.test);
    return s;
}

int cmd_gen(const Common& c) {
    auto cfg = resolve(c);
    if (c.seed) cfg.gen.seed = *c.seed;
    const auto out = output_dir(cfg, "gen");
    const auto g = make_benchmark(cfg, out, c.force);
    std::cout << "wrote " << g.report.total() << " windows (" << g.report.unsafe() << " unsafe, ratio "
              << csv::format_fixed(g.report.realized_ratio, 2) << ":1) to " << out.string() << '\n';
    return kOk;
}

int cmd_train_uncertainty(const Common& c) {
    const auto cfg = resolve(c);
    const auto out = output_dir(cfg, "train-uncertainty");
    prepare_output_dir(out, c.force);
    const auto data = prepare(load_benchmark(data_dir(cfg)));
    const auto stage = run_uncertainty(data, cfg, derive_seed(cfg.seed, "uncertainty"));
    nn::save_model(stage.model.to_file(), out / "uncertainty.model");
    {
        std::ofstream log(out / "training_log.csv");
        log << "epoch,train_loss,val_f1\n";
        for (const auto& e : stage.log)
            log << e.epoch << ',' << csv::format_double(e.train_loss) << ',' << csv::format_double(e.val_f1) << '\n';
    }
    {
        std::ofstream f(out / "scores.csv");
        write_scores_csv(data, stage, f);
    }
    auto m = run_manifest(cfg, "train-uncertainty", cfg.seed);
    m.set("data_dir", data_dir(cfg).string());
    m.set("best_epoch", std::to_string(stage.best_epoch));
    m.set("parameters", stage.model.parameter_count());
    m.write(out / "manifest.txt");
    std::cout << "uncertainty model (" << stage.model.parameter_count() << " parameters, best epoch " << stage.best_epoch
              << ") written to " << out.string() << '\n';
    return kOk;
}

int cmd_score(const Common& c, const std::string& model_file) {
    const auto cfg = resolve(c);
    const auto out = output_dir(cfg, "score");
    if (model_file.empty()) throw IoError("score needs --model");
    prepare_output_dir(out, c.force);
    const auto data = prepare(load_benchmark(data_dir(cfg)));
    UncertaintyStage s;
    s.model = UncertaintyModel::from_file(nn::load_model(model_file));
    s.train_scores = score_all(s.model, data.standardized.train);
    s.val_scores = score_all(s.model, data.standardized.validation);
    s.test_scores = score_all(s.model, data.standardized.test);
    {
        std::ofstream f(out / "scores.csv");
        write_scores_csv(data, s, f);
    }
    const auto corr = metrics::point_biserial(s.test_scores, safety_labels(data.standardized.test));
    auto m = run_manifest(cfg, "score", cfg.seed);
    m.set("model", model_file);
    m.set("point_biserial_r", corr.r);
    m.set("point_biserial_p", corr.p_value);
    m.write(out / "manifest.txt");
    std::cout << "test split point-biserial r=" << csv::format_fixed(corr.r, 4) << " p=" << corr.p_value << '\n';
    return kOk;
}

int cmd_relabel(const Common& c, const std::string& scores_file) {
    const auto cfg = resolve(c);
    const auto out = output_dir(cfg, "relabel");
    prepare_output_dir(out, c.force);
    const auto split = load_benchmark(data_dir(cfg));
    const auto data = prepare(split);
    const auto stage = scores_for(data, cfg, scores_file);
    const TrainingScope scope(data.standardized.train);
    const auto res = scope.relabel(data.standardized.train, stage.train_scores, cfg.tau, derive_seed(cfg.seed, "ulnr.relabel"));
    {
        std::ofstream f(out / "relabel_report.csv");
        ulnr::write_report_csv(res.report, f);
        std::ofstream s(out / "relabel_summary.json");
        ulnr::write_report_summary(res.report, s);
    }
    auto relabelled = split.train;
    for (std::size_t i = 0; i < relabelled.size(); ++i) relabelled[i].safety_label = res.windows[i].safety_label;
    write_windows_csv(relabelled, out / "train_relabelled.csv");
    auto m = run_manifest(cfg, "relabel", cfg.seed);
    m.set("tau", cfg.tau);
    m.set("labels_flipped", res.report.labels_flipped);
    m.set("flip_ratio", res.report.flip_ratio);
    m.set("final_ratio", res.report.final_minority_ratio);
    m.write(out / "manifest.txt");
    std::cout << "tau=" << csv::format_double(cfg.tau) << ": " << res.report.labels_flipped << " labels flipped ("
              << csv::format_fixed(100.0 * res.report.flip_ratio, 2) << "%), final minority ratio "
              << csv::format_fixed(100.0 * res.report.final_minority_ratio, 2) << "%\n";
    return kOk;
}

int cmd_train_safety(const Common& c, const std::string& scores_file) {
    const auto cfg = resolve(c);
    const auto out = output_dir(cfg, "train-safety");
    const bool needs_scores = cfg.strategy == Strategy::ulnr || cfg.safety.model.fusion != Fusion::plain;
    if (needs_scores && scores_file.empty())
        throw IoError("strategy '" + to_string(cfg.strategy) + "' with fusion '" + to_string(cfg.safety.model.fusion) +
                      "' needs --scores (from train-uncertainty or score)");
    prepare_output_dir(out, c.force);
    const auto data = prepare(load_benchmark(data_dir(cfg)));
    UncertaintyStage stage;
    if (needs_scores) stage = scores_for(data, cfg, scores_file);
    const auto o = run_strategy(data, stage, cfg, cfg.strategy, cfg.seed);
    nn::save_model(o.model.to_file(data.stats), out / "safety.model");
    const auto hash = config_hash(cfg);
    {
        std::ofstream f(out / "metrics.csv");
        write_metrics_header(f);
        write_metrics_row(f, hash, cfg.seed, o);
    }
    if (o.relabel) {
        std::ofstream f(out / "relabel_report.csv");
        ulnr::write_report_csv(*o.relabel, f);
    }
    auto m = run_manifest(cfg, "train-safety", cfg.seed);
    m.set("strategy", to_string(cfg.strategy));
    m.set("fusion", to_string(cfg.safety.model.fusion));
    if (o.tau) m.set("tau", *o.tau);
    m.set("best_epoch", std::to_string(o.best_epoch));
    m.set("val_f1", o.val_f1);
    m.write(out / "manifest.txt");
    std::cout << to_string(cfg.strategy) << ": test precision " << csv::format_fixed(o.test.precision, 3) << " recall "
              << csv::format_fixed(o.test.recall, 3) << " F1 " << csv::format_fixed(o.test.f1, 3) << '\n';
    return kOk;
}

int cmd_evaluate(const Common& c, const std::string& strategies, std::optional<int> seeds) {
    auto cfg = resolve(c);
    if (!strategies.empty()) set_config_value(cfg, "evaluate.strategies", strategies);
    if (seeds) cfg.eval_seeds = *seeds;
    cfg.validate();
    const auto out = output_dir(cfg, "evaluate");
    prepare_output_dir(out, c.force);
    const auto split = load_benchmark(data_dir(cfg));
    const auto hash = config_hash(cfg);
    std::ofstream runs(out / "runs.csv");
    if (!runs) throw IoError("cannot write runs.csv");
    write_metrics_header(runs);
    const auto res = evaluate_strategies(cfg, split, [&](std::uint64_t seed, const StrategyOutcome& o) {
        write_metrics_row(runs, hash, seed, o);
        runs.flush();
        std::cerr << "seed " << seed << ' ' << to_string(o.strategy) << " F1 " << csv::format_fixed(o.test.f1, 3) << '\n';
    });
    {
        std::ofstream f(out / "comparison.csv");
        metrics::write_comparison_csv(res.rows, f, true);
    }
    {
        std::ofstream f(out / "efficiency.csv");
        f << "method,params,latency_ms\n";
        for (const auto& r : res.rows)
            f << r.method << ',' << r.params << ',' << csv::format_fixed(r.latency_s * 1e3, 4) << '\n';
    }
    {
        std::ofstream f(out / "correlation.csv");
        f << "seed,r,p_value\n";
        for (std::size_t i = 0; i < res.seeds.size(); ++i)
            f << res.seeds[i] << ',' << csv::format_double(res.correlations[i].r) << ','
              << csv::format_double(res.correlations[i].p_value) << '\n';
    }
    write_text(out / "config.ini", canonical_config(cfg));
    auto m = run_manifest(cfg, "evaluate", cfg.seed);
    m.set("seeds", std::to_string(cfg.eval_seeds));
    m.write(out / "manifest.txt");
    metrics::write_comparison_csv(res.rows, std::cout, true);
    return kOk;
}

int cmd_pipeline(const Common& c) {
    auto cfg = resolve(c);
    const auto out = output_dir(cfg, "pipeline");
    fs::path data = cfg.data_dir;
    fs::path target = out;
    // no data given: generate into out/data, artifacts go to out/run
    if (data.empty()) {
        prepare_output_dir(out, c.force);
        data = out / "data";
        target = out / "run";
        make_benchmark(cfg, data, true);
    }
    const auto r = run_pipeline(cfg, data, target, c.force || cfg.data_dir.empty());
    std::cout << to_string(cfg.strategy) << " F1 " << csv::format_fixed(r.outcome.test.f1, 3) << " (precision "
              << csv::format_fixed(r.outcome.test.precision, 3) << ", recall " << csv::format_fixed(r.outcome.test.recall, 3)
              << "), point-biserial r " << csv::format_fixed(r.correlation.r, 3) << '\n';
    return kOk;
}

int cmd_sweep(const Common& c, const std::string& scores_file) {
    const auto cfg = resolve(c);
    const auto out = output_dir(cfg, "sweep-tau");
    prepare_output_dir(out, c.force);
    const auto data = prepare(load_benchmark(data_dir(cfg)));
    const auto stage = scores_for(data, cfg, scores_file);
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < cfg.sweep_seeds; ++i) seeds.push_back(derive_seed(cfg.seed + static_cast<std::uint64_t>(i), "ulnr.relabel"));
    const TrainingScope scope(data.standardized.train);
    scope.require_training(data.standardized.train, "tau sweep");
    const auto table = ulnr::sweep_tau(data.standardized.train, stage.train_scores, cfg.sweep_taus, seeds);
    {
        std::ofstream f(out / "sweep.csv");
        ulnr::write_sweep_csv(table, f);
    }
    auto m = run_manifest(cfg, "sweep-tau", cfg.seed);
    m.set("seeds", std::to_string(cfg.sweep_seeds));
    m.write(out / "manifest.txt");
    std::cout << "tau,labels_flipped,flip_ratio,final_ratio\n";
    for (std::size_t i = 0; i < table.mean.size(); ++i)
        std::cout << csv::format_double(table.mean[i].tau) << ',' << csv::format_fixed(table.mean_flipped[i], 1) << ','
                  << csv::format_fixed(100.0 * table.mean[i].flip_ratio, 2) << "%,"
                  << csv::format_fixed(100.0 * table.mean[i].final_ratio, 2) << "%\n";
    return kOk;
}

int cmd_gradcheck(std::uint64_t seed) {
    bool ok = true;
    for (const auto& r : gradcheck_all(seed)) {
        ok = ok && r.report.passed();
        std::cout << (r.report.passed() ? "PASS " : "FAIL ") << r.name << ": " << r.report.checked << " entries, max relative error "
                  << r.report.max_relative_error << " (worst " << r.report.worst_parameter << '[' << r.report.worst_index
                  << "]), tolerance " << r.report.tolerance << '\n';
    }
    return ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ubalance: uncertainty-guided rebalancing for UAV safety prediction"};
    app.require_subcommand(1);
    Common c;
    std::string model_file, scores_file, strategies;
    std::optional<int> eval_seeds;
    std::uint64_t gc_seed = 1;

    auto* gen = app.add_subcommand("gen", "generate the synthetic benchmark");
    add_common(gen, c, false);
    auto* tu = app.add_subcommand("train-uncertainty", "train the GatedMLP uncertainty predictor");
    add_common(tu, c);
    auto* sc = app.add_subcommand("score", "score every window with a trained uncertainty model");
    add_common(sc, c);
    sc->add_option("--model", model_file, "uncertainty.model file")->required();
    auto* rl = app.add_subcommand("relabel", "apply uLNR to the training split");
    add_common(rl, c);
    rl->add_option("--tau", c.tau, "flip threshold");
    rl->add_option("--scores", scores_file, "scores.csv (trains a model when omitted)");
    auto* ts = app.add_subcommand("train-safety", "train the BiLSTM safety predictor");
    add_common(ts, c);
    add_training(ts, c);
    ts->add_option("--scores", scores_file, "scores.csv, needed for uLNR and fusion");
    auto* ev = app.add_subcommand("evaluate", "multi-seed comparison of rebalancing strategies");
    add_common(ev, c);
    add_training(ev, c);
    ev->add_option("--strategies", strategies, "comma-separated; the first is the reference");
    ev->add_option("--seeds", eval_seeds, "number of seeds");
    auto* pl = app.add_subcommand("pipeline", "run every stage end to end");
    add_common(pl, c);
    add_training(pl, c);
    auto* sw = app.add_subcommand("sweep-tau", "flip-threshold sweep over the training split");
    add_common(sw, c);
    sw->add_option("--scores", scores_file, "scores.csv (trains a model when omitted)");
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of both networks");
    gc->add_option("--seed", gc_seed, "seed for weights and inputs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*gen) return cmd_gen(c);
        if (*tu) return cmd_train_uncertainty(c);
        if (*sc) return cmd_score(c, model_file);
        if (*rl) return cmd_relabel(c, scores_file);
        if (*ts) return cmd_train_safety(c, scores_file);
        if (*ev) return cmd_evaluate(c, strategies, eval_seeds);
        if (*pl) return cmd_pipeline(c);
        if (*sw) return cmd_sweep(c, scores_file);
        if (*gc) return cmd_gradcheck(gc_seed);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return kParse;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kIo;
    } catch (const TrainingError& e) {
        std::cerr << "training diverged: " << e.what() << '\n';
        return kTraining;
    } catch (const boost::property_tree::ini_parser_error& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return kParse;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kFailure;
}
