#include <gtest/gtest.h>

#include <sstream>

#include "ubalance/config.hpp"

using namespace ubalance;

namespace {

RunConfig parse(const std::string& text, const std::string& profile = "") {
    std::istringstream in(text);
    return parse_config(in, "test.ini", profile);
}

}  // namespace

TEST(Config, DefaultsMatchTheReferenceSetup) {
    const RunConfig c;
    EXPECT_EQ(c.uncertainty.model.projection_dim, 64);
    EXPECT_EQ(c.uncertainty.model.expansion_dim, 128);
    EXPECT_EQ(c.uncertainty.model.head_dim, 32);
    EXPECT_DOUBLE_EQ(c.uncertainty.optim.learning_rate, 1e-3);
    EXPECT_EQ(c.uncertainty.optim.epochs, 30);
    EXPECT_EQ(c.safety.model.hidden, 64);
    EXPECT_EQ(c.safety.model.layers, 3);
    EXPECT_DOUBLE_EQ(c.safety.optim.learning_rate, 1e-2);
    EXPECT_EQ(c.safety.optim.epochs, 50);
    EXPECT_EQ(c.safety.optim.batch_size, 256);
    EXPECT_DOUBLE_EQ(*c.safety.optim.grad_clip_norm, 1.0);
    EXPECT_DOUBLE_EQ(c.tau, 3.0);
    EXPECT_EQ(c.gen.rules.window_length, 25);
    EXPECT_DOUBLE_EQ(c.gen.rules.safety_threshold_m, 1.5);
}

TEST(Config, ParsesSectionsAndOverrides) {
    const auto c = parse("[run]\nseed = 42\nstrategy = cw\n[safety]\nhidden = 16\nfusion = late\ngrad_clip = none\n"
                         "[ulnr]\ntau = 2.5\ntau_grid = 3,2\n[evaluate]\nstrategies = ulnr,none\n");
    EXPECT_EQ(c.seed, 42u);
    EXPECT_EQ(c.strategy, Strategy::class_weight);
    EXPECT_EQ(c.safety.model.hidden, 16);
    EXPECT_EQ(c.safety.model.fusion, Fusion::late);
    EXPECT_FALSE(c.safety.optim.grad_clip_norm.has_value());
    EXPECT_DOUBLE_EQ(c.tau, 2.5);
    EXPECT_EQ(c.tau_grid, (std::vector<double>{3, 2}));
    EXPECT_EQ(c.eval_strategies.size(), 2u);
}

TEST(Config, ProfileAppliesBeforeExplicitKeys) {
    const auto c = parse("[run]\nprofile = desk\n[safety]\nepochs = 7\n");
    EXPECT_EQ(c.profile, "desk");
    EXPECT_EQ(c.safety.model.layers, 1);
    EXPECT_EQ(c.safety.optim.epochs, 7);
    const auto p = parse("[safety]\nepochs = 7\n", "desk");
    EXPECT_EQ(p.safety.optim.epochs, 7);
    EXPECT_EQ(p.safety.model.hidden, 32);
    EXPECT_THROW(parse("", "huge"), ConfigError);
}

TEST(Config, Errors) {
    EXPECT_THROW(parse("[safety]\nhiden = 3\n"), ConfigError);
    EXPECT_THROW(parse("[safety]\nhidden = three\n"), ConfigError);
    EXPECT_THROW(parse("[safety]\nhidden = 0\n"), ConfigError);
    EXPECT_THROW(parse("[safety]\nfusion = middle\n"), ConfigError);
    EXPECT_THROW(parse("[evaluate]\nseeds = 1\n"), ConfigError);
    EXPECT_THROW(parse("[ulnr]\ntau = nan\n"), ConfigError);
    try {
        parse("[safety]\nhidden = 3\n[broken\n");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
    EXPECT_THROW(load_config("/nonexistent/ubalance.ini"), IoError);
}

TEST(Config, CanonicalRoundTripAndHash) {
    auto c = parse("[run]\nprofile = desk\nseed = 5\n[ulnr]\ntau = 2\n");
    const auto text = canonical_config(c);
    const auto back = parse(text);
    EXPECT_EQ(canonical_config(back), text);
    EXPECT_EQ(config_hash(back), config_hash(c));
    EXPECT_EQ(config_hash(c).size(), 16u);
    c.data_dir = "/elsewhere";
    EXPECT_EQ(config_hash(c), config_hash(back));
    c.tau = 2.5;
    EXPECT_NE(config_hash(c), config_hash(back));
}
