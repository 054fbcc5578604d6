#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nncore.hpp"
#include "rng.hpp"
#include "safety_predictor.hpp"
#include "uncertainty_predictor.hpp"

namespace ubalance {

struct NamedGradCheck {
    std::string name;
    std::size_t parameters = 0;
    nn::GradCheckReport report;
};

// Full GatedMLP stack with dropout active. The dropout RNG is re-seeded on
// every evaluation so the mask stays fixed while parameters are perturbed.
inline NamedGradCheck gradcheck_gated_mlp(std::uint64_t seed = 1, double tolerance = 1e-4) {
    GatedMlpConfig cfg{6, 10, 5, 0.3};
    Rng init(derive_seed(seed, "gradcheck.gatedmlp.init"));
    UncertaintyModel model(cfg, init);
    Rng data_rng(derive_seed(seed, "gradcheck.gatedmlp.data"));
    nn::Matrix x(kFeatureDim, 7);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = data_rng.normal();
    std::vector<double> y;
    for (int i = 0; i < 7; ++i) y.push_back(i % 3 == 0 ? 1.0 : 0.0);
    const auto mask_seed = derive_seed(seed, "gradcheck.gatedmlp.mask");
    auto loss = [&](bool with_grad) {
        Rng mask_rng(mask_seed);
        const nn::Matrix z = model.forward_features(x, true, mask_rng);
        const auto l = nn::bce_with_logits(z, y, nullptr);
        if (with_grad) model.backward(l.grad);
        return l.value;
    };
    return {"gatedmlp", model.parameter_count(), nn::check_gradients(loss, model.parameters(), tolerance)};
}

// Two-layer BiLSTM plus classification head, small enough to check every
// parameter. Inter-layer dropout is active with a fixed mask.
inline NamedGradCheck gradcheck_bilstm(Fusion fusion = Fusion::plain, std::uint64_t seed = 1, double tolerance = 1e-4) {
    BiLstmConfig cfg;
    cfg.hidden = 3;
    cfg.layers = 2;
    cfg.head_dim = 4;
    cfg.dropout = 0.3;
    cfg.fusion = fusion;
    Rng init(derive_seed(seed, "gradcheck.bilstm.init"));
    SafetyModel model(cfg, init);
    Rng data_rng(derive_seed(seed, "gradcheck.bilstm.data"));
    std::vector<Window> windows;
    std::vector<double> y, u;
    for (int i = 0; i < 4; ++i) {
        Window w;
        w.values.resize(6, kChannels);
        for (Eigen::Index k = 0; k < w.values.size(); ++k) w.values(k) = data_rng.normal();
        windows.push_back(std::move(w));
        y.push_back(i % 2 == 0 ? 1.0 : 0.0);
        u.push_back(data_rng.normal());
    }
    const auto data = SequenceSet::from_windows(windows, fusion == Fusion::plain ? std::vector<double>{} : u);
    const std::vector<std::size_t> idx{0, 1, 2, 3};
    const auto mask_seed = derive_seed(seed, "gradcheck.bilstm.mask");
    auto loss = [&](bool with_grad) {
        Rng mask_rng(mask_seed);
        const nn::Matrix z = model.forward(data, idx, true, mask_rng);
        const auto l = nn::bce_with_logits(z, y, nullptr);
        if (with_grad) model.backward(l.grad);
        return l.value;
    };
    return {"bilstm-" + to_string(fusion), model.parameter_count(), nn::check_gradients(loss, model.parameters(), tolerance)};
}

inline std::vector<NamedGradCheck> gradcheck_all(std::uint64_t seed = 1, double tolerance = 1e-4) {
    return {gradcheck_gated_mlp(seed, tolerance), gradcheck_bilstm(Fusion::plain, seed, tolerance),
            gradcheck_bilstm(Fusion::early, seed, tolerance), gradcheck_bilstm(Fusion::late, seed, tolerance)};
}

}  // namespace ubalance
