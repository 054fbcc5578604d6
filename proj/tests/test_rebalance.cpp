#include <gtest/gtest.h>

#include "ubalance/rebalance.hpp"

using namespace ubalance;

namespace {

std::vector<Window> dataset(int safe, int unsafe) {
    std::vector<Window> ws;
    for (int i = 0; i < safe + unsafe; ++i) {
        Window w;
        w.window_id = std::to_string(i);
        w.safety_label = i % ((safe + unsafe) / unsafe) == 0 && unsafe > 0 ? 1 : 0;
        ws.push_back(w);
    }
    return ws;
}

}  // namespace

TEST(Rebalance, ClassWeights) {
    std::vector<int> labels(100, 0);
    for (int i = 0; i < 10; ++i) labels[static_cast<std::size_t>(i)] = 1;
    const auto w = class_weights(labels);
    EXPECT_DOUBLE_EQ(w.safe, 1.0);
    EXPECT_DOUBLE_EQ(w.unsafe, 9.0);
    const auto sw = sample_weights(labels, w);
    EXPECT_DOUBLE_EQ(sw[0], 9.0);
    EXPECT_DOUBLE_EQ(sw[50], 1.0);
    EXPECT_THROW(class_weights({0, 0, 0}), ConfigError);
    EXPECT_THROW(class_weights({1, 1}), ConfigError);
}

TEST(Rebalance, WeightedTotalsBalance) {
    std::vector<int> labels;
    for (int i = 0; i < 470; ++i) labels.push_back(i % 47 == 0);
    const auto sw = sample_weights(labels, class_weights(labels));
    double safe = 0, unsafe = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? unsafe : safe) += sw[i];
    EXPECT_NEAR(safe, unsafe, 1e-9);
}

TEST(Rebalance, UndersampleOneToOne) {
    const auto ws = dataset(460, 10);
    Rng rng(4);
    const auto out = random_undersample(ws, 1.0, rng);
    int unsafe = 0, safe = 0;
    for (const auto& w : out) (w.safety_label ? unsafe : safe)++;
    EXPECT_EQ(unsafe, 10);
    EXPECT_EQ(safe, 10);
    for (std::size_t i = 1; i < out.size(); ++i) EXPECT_LT(std::stoi(out[i - 1].window_id), std::stoi(out[i].window_id));
}

TEST(Rebalance, UndersampleRatioAndSeed) {
    const auto ws = dataset(460, 10);
    Rng a(4), b(4), c(5);
    const auto x = random_undersample(ws, 3.0, a), y = random_undersample(ws, 3.0, b), z = random_undersample(ws, 3.0, c);
    EXPECT_EQ(x.size(), 40u);
    std::vector<std::string> ix, iy, iz;
    for (const auto& w : x) ix.push_back(w.window_id);
    for (const auto& w : y) iy.push_back(w.window_id);
    for (const auto& w : z) iz.push_back(w.window_id);
    EXPECT_EQ(ix, iy);
    EXPECT_NE(ix, iz);
}

TEST(Rebalance, UndersampleNoOpAndErrors) {
    const auto ws = dataset(20, 10);
    Rng rng(1);
    EXPECT_EQ(random_undersample(ws, 5.0, rng).size(), ws.size());
    EXPECT_THROW(random_undersample(ws, 0.5, rng), ConfigError);
}

TEST(Rebalance, StrategyNames) {
    for (auto s : {Strategy::none, Strategy::ulnr, Strategy::class_weight, Strategy::random_undersample})
        EXPECT_EQ(parse_strategy(to_string(s)), s);
    EXPECT_EQ(parse_strategy("plain"), Strategy::none);
    EXPECT_THROW(parse_strategy("smote"), ConfigError);
}
