#pragma once

#include <string>
#include <vector>

#include "features.hpp"
#include "model_io.hpp"
#include "nncore.hpp"
#include "rng.hpp"
#include "telemetry.hpp"
#include "trainer.hpp"

namespace ubalance {

struct GatedMlpConfig {
    int projection_dim = 64;
    int expansion_dim = 128;
    int head_dim = 32;
    double dropout = 0.3;

    void validate() const {
        if (projection_dim < 1 || expansion_dim < 1 || head_dim < 1) throw ConfigError("GatedMLP dimensions must be >= 1");
        if (expansion_dim <= projection_dim) throw ConfigError("GatedMLP expansion_dim must exceed projection_dim");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("GatedMLP dropout must be in [0, 1)");
    }
};

// Features for a batch of windows, one column per window.
struct FeatureSet {
    nn::Matrix features;  // 16 x n

    static FeatureSet from_windows(const std::vector<Window>& windows) { return {feature_matrix(windows)}; }
    std::size_t size() const { return static_cast<std::size_t>(features.cols()); }
};

// Intermediate activations of the gated block, exposed for inspection.
struct GatedTrace {
    nn::Matrix projected;  // ReLU(W_proj f + b_proj)
    nn::Matrix transform;  // W2 ReLU(W1 d + b1) + b2
    nn::Matrix gate;       // sigmoid(W_g d + b_g)
    nn::Matrix output;     // g * h + (1 - g) * d
};

// Regressor from the 16-dim distributional features to a scalar uncertainty
// score (the pre-sigmoid logit):
//
//   d = ReLU(W_proj f + b_proj)
//   h = W2 ReLU(W1 d + b1) + b2
//   g = sigmoid(W_g d + b_g)
//   o = g * h + (1 - g) * d
//   u = W4 dropout(ReLU(W3 o + b3)) + b4
class UncertaintyModel {
public:
    UncertaintyModel() = default;
    UncertaintyModel(const GatedMlpConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        proj_ = nn::Dense("proj", kFeatureDim, cfg.projection_dim, rng);
        fc1_ = nn::Dense("transform.fc1", cfg.projection_dim, cfg.expansion_dim, rng);
        fc2_ = nn::Dense("transform.fc2", cfg.expansion_dim, cfg.projection_dim, rng);
        gate_ = nn::Dense("gate", cfg.projection_dim, cfg.projection_dim, rng);
        head1_ = nn::Dense("head.fc1", cfg.projection_dim, cfg.head_dim, rng);
        head2_ = nn::Dense("head.fc2", cfg.head_dim, 1, rng);
    }

    const GatedMlpConfig& config() const { return cfg_; }

    nn::ParameterRefs parameters() {
        nn::ParameterRefs out;
        for (auto* layer : {&proj_, &fc1_, &fc2_, &gate_, &head1_, &head2_}) layer->collect(out);
        return out;
    }

    nn::ConstParameterRefs parameters() const {
        nn::ConstParameterRefs out;
        for (const auto* layer : {&proj_, &fc1_, &fc2_, &gate_, &head1_, &head2_}) layer->collect(out);
        return out;
    }

    std::size_t parameter_count() const { return nn::parameter_count(parameters()); }

    nn::Dense& projection() { return proj_; }
    nn::Dense& transform_in() { return fc1_; }
    nn::Dense& transform_out() { return fc2_; }
    nn::Dense& gate() { return gate_; }

    // --- BinaryModel interface -------------------------------------------
    std::size_t batch_size_of(const FeatureSet& data) const { return data.size(); }

    nn::Matrix forward(const FeatureSet& data, const std::vector<std::size_t>& idx, bool training, Rng& rng) {
        nn::Matrix x(kFeatureDim, static_cast<Eigen::Index>(idx.size()));
        for (std::size_t i = 0; i < idx.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = data.features.col(static_cast<Eigen::Index>(idx[i]));
        return forward_features(x, training, rng);
    }

    // Caches activations for backward().
    nn::Matrix forward_features(const nn::Matrix& x, bool training, Rng& rng) {
        return run(x, training, &rng, &cache_);
    }

    void backward(const nn::Matrix& dlogit) {
        auto& c = cache_;
        nn::Matrix d = head2_.backward(c.head_dropped, dlogit);
        d = c.mask.backward(d);
        d = nn::relu_backward(c.head_pre, d);
        const nn::Matrix d_o = head1_.backward(c.output, d);

        const nn::Matrix d_gate = (d_o.array() * (c.transform - c.projected).array()).matrix();
        const nn::Matrix d_transform = nn::hadamard(d_o, c.gate);
        nn::Matrix d_proj = (d_o.array() * (1.0 - c.gate.array())).matrix();

        d_proj += gate_.backward(c.projected, nn::sigmoid_backward(c.gate, d_gate));
        const nn::Matrix d_hidden = fc2_.backward(c.hidden, d_transform);
        d_proj += fc1_.backward(c.projected, nn::relu_backward(c.hidden_pre, d_hidden));
        proj_.backward(c.input, nn::relu_backward(c.proj_pre, d_proj));
    }

    // Inference logits, dropout off.
    std::vector<double> logits(const FeatureSet& data) const {
        const nn::Matrix out = run(data.features, false, nullptr, nullptr);
        return {out.data(), out.data() + out.size()};
    }

    double score(const FeatureVector16& f) const { return run(f, false, nullptr, nullptr)(0, 0); }

    GatedTrace trace(const nn::Matrix& features) const {
        Cache c;
        run(features, false, nullptr, &c);
        return {c.projected, c.transform, c.gate, c.output};
    }

    // Model file ---------------------------------------------------------
    nn::ModelFile to_file() const {
        nn::ModelFile f;
        f.kind = "gatedmlp-v1";
        f.meta["projection_dim"] = std::to_string(cfg_.projection_dim);
        f.meta["expansion_dim"] = std::to_string(cfg_.expansion_dim);
        f.meta["head_dim"] = std::to_string(cfg_.head_dim);
        f.meta["dropout"] = csv::format_double(cfg_.dropout);
        f.meta["feature_order"] = "r,x,y,z:mean,std,min,max";
        nn::export_params(f, parameters());
        return f;
    }

    static UncertaintyModel from_file(const nn::ModelFile& f) {
        if (f.kind != "gatedmlp-v1") throw ParseError(f.kind, 0, "expected a gatedmlp-v1 model");
        GatedMlpConfig cfg;
        cfg.projection_dim = std::stoi(f.meta_value("projection_dim"));
        cfg.expansion_dim = std::stoi(f.meta_value("expansion_dim"));
        cfg.head_dim = std::stoi(f.meta_value("head_dim"));
        cfg.dropout = std::stod(f.meta_value("dropout"));
        Rng rng(0);
        UncertaintyModel m(cfg, rng);
        nn::import_params(f, m.parameters());
        return m;
    }

private:
    struct Cache {
        nn::Matrix input, proj_pre, projected, hidden_pre, hidden, transform, gate, output, head_pre, head_dropped;
        nn::DropoutMask mask;
    };

    nn::Matrix run(const nn::Matrix& x, bool training, Rng* rng, Cache* cache) const {
        Cache local;
        Cache& c = cache ? *cache : local;
        c.input = x;
        c.proj_pre = proj_.forward(x);
        c.projected = nn::relu(c.proj_pre);
        c.hidden_pre = fc1_.forward(c.projected);
        c.hidden = nn::relu(c.hidden_pre);
        c.transform = fc2_.forward(c.hidden);
        c.gate = nn::sigmoid(gate_.forward(c.projected));
        c.output = (c.gate.array() * c.transform.array() + (1.0 - c.gate.array()) * c.projected.array()).matrix();
        c.head_pre = head1_.forward(c.output);
        const nn::Matrix head = nn::relu(c.head_pre);
        if (training && rng) {
            c.mask = nn::make_dropout(head.rows(), head.cols(), cfg_.dropout, true, *rng);
        } else {
            c.mask = {};
        }
        c.head_dropped = c.mask.apply(head);
        return head2_.forward(c.head_dropped);
    }

    GatedMlpConfig cfg_;
    nn::Dense proj_, fc1_, fc2_, gate_, head1_, head2_;
    Cache cache_;
};

struct UncertaintyTrainConfig {
    GatedMlpConfig model;
    nn::AdamWConfig optim{1e-3, 1e-4, 0.9, 0.999, 1e-8, 256, 30, std::nullopt};
};

inline std::vector<int> uncertainty_labels(const std::vector<Window>& windows) {
    std::vector<int> out;
    out.reserve(windows.size());
    for (const auto& w : windows) out.push_back(w.uncertainty_label);
    return out;
}

// Fits the regressor with BCE of sigmoid(u) against the uncertainty labels
// and returns the best-validation-F1 epoch.
inline TrainResult<UncertaintyModel> train_uncertainty(const std::vector<Window>& train, const std::vector<Window>& val,
                                                      const UncertaintyTrainConfig& cfg, std::uint64_t seed) {
    if (train.empty()) throw ConfigError("uncertainty predictor: empty training set");
    Rng init_rng(derive_seed(seed, "uncertainty.init"));
    Rng train_rng(derive_seed(seed, "uncertainty.train"));
    UncertaintyModel model(cfg.model, init_rng);
    return fit_binary(std::move(model), FeatureSet::from_windows(train), uncertainty_labels(train), {},
                      FeatureSet::from_windows(val), uncertainty_labels(val), cfg.optim, train_rng);
}

// Uncertainty score (logit) per window, in input order.
inline std::vector<double> score_all(const UncertaintyModel& model, const std::vector<Window>& windows) {
    if (windows.empty()) return {};
    return model.logits(FeatureSet::from_windows(windows));
}

}  // namespace ubalance
