#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ubalance/pipeline.hpp"

using namespace ubalance;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto d = fs::temp_directory_path() / ("ubalance_pipeline_" + name);
    fs::remove_all(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

RunConfig tiny() {
    RunConfig c;
    c.gen.n_flights = 60;
    c.gen.flight_length = 250;
    c.gen.imbalance_ratio = 20;
    c.uncertainty.model = {8, 12, 4, 0.1};
    c.uncertainty.optim.epochs = 3;
    c.uncertainty.optim.batch_size = 64;
    c.safety.model.hidden = 4;
    c.safety.model.layers = 1;
    c.safety.model.head_dim = 4;
    c.safety.optim.epochs = 2;
    c.safety.optim.batch_size = 64;
    c.tau = 0.5;
    return c;
}

}  // namespace

TEST(Pipeline, BenchmarkRoundTrip) {
    const auto dir = scratch("bench");
    const auto cfg = tiny();
    const auto gen = make_benchmark(cfg, dir, false);
    for (const char* f : {"windows.csv", "split.csv", "channel_stats.csv", "manifest.txt"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
    const auto split = load_benchmark(dir);
    const auto expected = split_sequential(gen.windows());
    ASSERT_EQ(split.train.size(), expected.train.size());
    ASSERT_EQ(split.test.size(), expected.test.size());
    EXPECT_EQ(split.test.back().window_id, expected.test.back().window_id);
    EXPECT_EQ(split.train[5].values, expected.train[5].values);
    const auto m = Manifest::read(dir / "manifest.txt");
    EXPECT_EQ(m.get("windows"), std::to_string(gen.report.total()));
    EXPECT_EQ(load_flights(dir / "flights").size(), 60u);
}

TEST(Pipeline, RefusesNonEmptyOutputWithoutForce) {
    const auto dir = scratch("refuse");
    fs::create_directories(dir);
    std::ofstream(dir / "keep.txt") << "x";
    EXPECT_THROW(make_benchmark(tiny(), dir, false), ConfigError);
    EXPECT_TRUE(fs::exists(dir / "keep.txt"));
    EXPECT_NO_THROW(make_benchmark(tiny(), dir, true));
}

TEST(Pipeline, LeakageGuard) {
    const auto split = split_sequential(synth::generate(tiny().gen).windows());
    TrainingScope scope(split.train);
    EXPECT_NO_THROW(scope.channel_stats(split.train));
    EXPECT_THROW(scope.channel_stats(split.test), ContractViolation);
    auto mixed = split.train;
    mixed.push_back(split.validation.front());
    std::vector<double> scores(mixed.size(), 0.0);
    try {
        scope.relabel(mixed, scores, 3.0, 1);
        FAIL();
    } catch (const ContractViolation& e) {
        EXPECT_NE(std::string(e.what()).find("leakage guard"), std::string::npos);
    }
}

TEST(Pipeline, StandardizationUsesTrainingStatsOnly) {
    const auto split = split_sequential(synth::generate(tiny().gen).windows());
    const auto d = prepare(split);
    const auto train_stats = fit_channel_stats(split.train);
    EXPECT_EQ(d.stats.mean, train_stats.mean);
    const auto restd = fit_channel_stats(d.standardized.train);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(restd.mean[c], 0.0, 1e-9);
}

TEST(Pipeline, DeterministicEndToEnd) {
    const auto data = scratch("det_data");
    const auto cfg = tiny();
    make_benchmark(cfg, data, false);
    const auto a = scratch("det_a"), b = scratch("det_b");
    const auto ra = run_pipeline(cfg, data, a, false);
    run_pipeline(cfg, data, b, false);
    for (const char* f : {"metrics.csv", "scores.csv", "safety.model", "uncertainty.model", "relabel_report.csv", "config.ini"})
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    EXPECT_TRUE(ra.outcome.relabel.has_value());
    EXPECT_NE(slurp(a / "metrics.csv").find(config_hash(cfg)), std::string::npos);
    // Saved models reproduce the in-memory predictions.
    ChannelStats st;
    const auto model = SafetyModel::from_file(nn::load_model(a / "safety.model"), &st);
    const auto split = load_benchmark(data);
    const auto test = standardize_all(split.test, st);
    EXPECT_EQ(predict_all(model, test).probabilities, ra.outcome.test_probabilities);
    // Scores file round-trips.
    const auto d = prepare(split);
    EXPECT_EQ(read_scores_csv(a / "scores.csv", d.standardized.test), ra.uncertainty.test_scores);
}

TEST(Pipeline, StrategiesTrainOnTheRightData) {
    auto cfg = tiny();
    const auto d = prepare(split_sequential(synth::generate(cfg.gen).windows()));
    const auto u = run_uncertainty(d, cfg, 1);
    std::size_t unsafe = 0;
    for (const auto& w : d.standardized.train) unsafe += static_cast<std::size_t>(w.safety_label);
    const auto rus = run_strategy(d, u, cfg, Strategy::random_undersample, 1);
    EXPECT_EQ(rus.train_windows, 2 * unsafe);
    const auto none = run_strategy(d, u, cfg, Strategy::none, 1);
    EXPECT_EQ(none.train_windows, d.standardized.train.size());
    cfg.tune_tau = true;
    cfg.tau_grid = {3.0, 0.5};
    const auto ul = run_strategy(d, u, cfg, Strategy::ulnr, 1);
    ASSERT_EQ(ul.tau_trials.size(), 2u);
    EXPECT_GE(ul.tau_trials[0].labels_flipped, 0u);
    EXPECT_LE(ul.tau_trials[0].labels_flipped, ul.tau_trials[1].labels_flipped);
}
