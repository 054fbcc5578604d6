#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "ubalance/gradcheck.hpp"
#include "ubalance/model_io.hpp"
#include "ubalance/nncore.hpp"

using namespace ubalance;
using namespace ubalance::nn;

TEST(NnCore, DenseForwardHandComputed) {
    Rng rng(1);
    Dense d("d", 2, 2, rng);
    d.weight.value << 1, 2, 3, 4;
    d.bias.value << 0.5, -1;
    Matrix x(2, 2);
    x << 1, 0, 1, 2;  // columns (1,1) and (0,2)
    const Matrix y = d.forward(x);
    EXPECT_DOUBLE_EQ(y(0, 0), 3.5);
    EXPECT_DOUBLE_EQ(y(1, 0), 6.0);
    EXPECT_DOUBLE_EQ(y(0, 1), 4.5);
    EXPECT_DOUBLE_EQ(y(1, 1), 7.0);
    EXPECT_THROW(d.forward(Matrix::Zero(3, 1)), ContractViolation);
}

TEST(NnCore, DenseBackwardHandComputed) {
    Rng rng(1);
    Dense d("d", 2, 1, rng);
    d.weight.value << 2, -1;
    Matrix x(2, 2);
    x << 1, 3, 2, 4;
    Matrix dy(1, 2);
    dy << 1, 0.5;
    const Matrix dx = d.backward(x, dy);
    EXPECT_DOUBLE_EQ(d.weight.grad(0, 0), 1 * 1 + 0.5 * 3);
    EXPECT_DOUBLE_EQ(d.weight.grad(0, 1), 1 * 2 + 0.5 * 4);
    EXPECT_DOUBLE_EQ(d.bias.grad(0, 0), 1.5);
    EXPECT_DOUBLE_EQ(dx(0, 1), 1.0);
    EXPECT_DOUBLE_EQ(dx(1, 1), -0.5);
}

TEST(NnCore, InitBoundsAndDeterminism) {
    Rng a(5), b(5);
    const Matrix m1 = uniform_init(40, 16, 16, a), m2 = uniform_init(40, 16, 16, b);
    EXPECT_EQ(m1, m2);
    EXPECT_LE(m1.cwiseAbs().maxCoeff(), 0.25);
    EXPECT_GT(m1.cwiseAbs().maxCoeff(), 0.2);
}

TEST(NnCore, SigmoidStable) {
    EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
    EXPECT_EQ(sigmoid(-1000.0), 0.0);
    EXPECT_EQ(sigmoid(1000.0), 1.0);
    EXPECT_NEAR(sigmoid(2.0), 1.0 / (1.0 + std::exp(-2.0)), 1e-16);
    EXPECT_NEAR(sigmoid(-2.0), 1.0 / (1.0 + std::exp(2.0)), 1e-16);
}

TEST(NnCore, BceHandComputed) {
    Matrix z(1, 2);
    z << 0.0, 2.0;
    const auto l = bce_with_logits(z, {1.0, 0.0});
    const double p2 = 1.0 / (1.0 + std::exp(-2.0));
    EXPECT_NEAR(l.value, 0.5 * (std::log(2.0) - std::log(1.0 - p2)), 1e-14);
    EXPECT_NEAR(l.grad(0, 0), 0.5 * (0.5 - 1.0), 1e-15);
    EXPECT_NEAR(l.grad(0, 1), 0.5 * p2, 1e-15);
    const std::vector<double> w{9.0, 1.0};
    const auto lw = bce_with_logits(z, {1.0, 0.0}, &w);
    EXPECT_NEAR(lw.value, 0.5 * (9 * std::log(2.0) - std::log(1.0 - p2)), 1e-13);
    EXPECT_NEAR(lw.grad(0, 0), 9 * 0.5 * (0.5 - 1.0), 1e-15);
}

TEST(NnCore, BceClampsLogButNotGradient) {
    Matrix z(1, 1);
    z << -100.0;
    const auto l = bce_with_logits(z, {1.0});
    EXPECT_NEAR(l.value, -std::log(1e-7), 1e-9);
    EXPECT_NEAR(l.grad(0, 0), -1.0, 1e-12);
}

TEST(NnCore, AdamWFirstStep) {
    // After one step with bias correction the update is lr * g / (|g| + eps)
    // on top of the decoupled decay.
    Parameter p("p", Matrix::Constant(1, 2, 1.0));
    p.grad << 0.5, -2.0;
    AdamWConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.01;
    AdamW opt(cfg);
    opt.step({&p});
    const double decayed = 1.0 * (1.0 - 0.1 * 0.01);
    EXPECT_NEAR(p.value(0, 0), decayed - 0.1 * 0.5 / (0.5 + 1e-8), 1e-12);
    EXPECT_NEAR(p.value(0, 1), decayed + 0.1 * 2.0 / (2.0 + 1e-8), 1e-12);
    EXPECT_EQ(opt.steps(), 1);
}

TEST(NnCore, AdamWSecondStepMatchesReference) {
    Parameter p("p", Matrix::Constant(1, 1, 0.3));
    AdamWConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.weight_decay = 0.1;
    AdamW opt(cfg);
    double w = 0.3, m = 0.0, v = 0.0;
    for (int t = 1; t <= 5; ++t) {
        const double g = 2.0 * w - 0.1 * t;
        p.grad(0, 0) = g;
        opt.step({&p});
        w *= 1.0 - 0.05 * 0.1;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        w -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        EXPECT_NEAR(p.value(0, 0), w, 1e-14) << t;
    }
}

TEST(NnCore, AdamWRejectsNonFiniteGradient) {
    Parameter p("p", Matrix::Zero(1, 1));
    p.grad(0, 0) = std::nan("");
    AdamW opt({});
    EXPECT_THROW(opt.step({&p}), TrainingError);
}

TEST(NnCore, GradientClipping) {
    Parameter a("a", Matrix::Zero(1, 1)), b("b", Matrix::Zero(1, 1));
    a.grad(0, 0) = 3.0;
    b.grad(0, 0) = 4.0;
    EXPECT_DOUBLE_EQ(clip_grad_norm({&a, &b}, 1.0), 5.0);
    EXPECT_NEAR(a.grad(0, 0), 0.6, 1e-15);
    EXPECT_NEAR(b.grad(0, 0), 0.8, 1e-15);
    EXPECT_DOUBLE_EQ(clip_grad_norm({&a, &b}, 2.0), 1.0);
    EXPECT_NEAR(a.grad(0, 0), 0.6, 1e-15);
}

TEST(NnCore, DropoutScalesKeptUnits) {
    Rng rng(3);
    const auto mask = make_dropout(50, 40, 0.3, true, rng);
    int zeros = 0;
    for (Eigen::Index i = 0; i < mask.scale.size(); ++i) {
        const double s = mask.scale.data()[i];
        if (s == 0.0) ++zeros;
        else EXPECT_DOUBLE_EQ(s, 1.0 / 0.7);
    }
    EXPECT_NEAR(zeros / 2000.0, 0.3, 0.05);
    EXPECT_FALSE(make_dropout(5, 5, 0.3, false, rng).active());
    EXPECT_THROW(make_dropout(5, 5, 1.0, true, rng), ConfigError);
}

TEST(NnCore, ModelFileRoundTripIsBitExact) {
    ModelFile f;
    f.kind = "test";
    f.meta["k"] = "some value";
    Matrix m(2, 3);
    m << 0.1, -1e-300, 3.0, 1.0 / 3.0, 12345.678, -0.0;
    f.params.emplace_back("w", m);
    std::stringstream s;
    write_model(f, s);
    const auto back = read_model(s);
    EXPECT_EQ(back.kind, "test");
    EXPECT_EQ(back.meta_value("k"), "some value");
    EXPECT_EQ(back.param("w"), m);
    std::istringstream bad("ubalance-model\nformat_version 9\nkind x\nend\n");
    EXPECT_THROW(read_model(bad), ParseError);
    std::istringstream truncated("ubalance-model\nformat_version 1\nkind x\nparam w 2 1\n0x1p+0\n");
    EXPECT_THROW(read_model(truncated), ParseError);
}

TEST(NnCore, GradientCheckGatedMlp) {
    const auto r = gradcheck_gated_mlp(1, 1e-4);
    EXPECT_GT(r.report.checked, 0u);
    EXPECT_TRUE(r.report.passed()) << r.report.worst_parameter << " rel " << r.report.max_relative_error;
}

TEST(NnCore, GradientCheckBiLstmAllFusions) {
    for (auto f : {Fusion::plain, Fusion::early, Fusion::late}) {
        const auto r = gradcheck_bilstm(f, 1, 1e-4);
        EXPECT_EQ(r.report.checked, r.parameters);
        EXPECT_TRUE(r.report.passed()) << r.name << ' ' << r.report.worst_parameter << " rel " << r.report.max_relative_error;
    }
}

TEST(NnCore, GradientCheckDetectsABrokenGradient) {
    Parameter p("p", Matrix::Constant(1, 1, 2.0));
    auto loss = [&](bool with_grad) {
        const double w = p.value(0, 0);
        if (with_grad) p.grad(0, 0) = 2.0 * w * 1.01;  // 1% off
        return w * w;
    };
    EXPECT_FALSE(check_gradients(loss, {&p}, 1e-4).passed());
}
