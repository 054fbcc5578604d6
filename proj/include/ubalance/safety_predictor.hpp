#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "lstm.hpp"
#include "model_io.hpp"
#include "nncore.hpp"
#include "telemetry.hpp"
#include "trainer.hpp"

namespace ubalance {

// How an uncertainty score reaches the classifier: not at all, as a constant
// extra input channel, or appended to the sequence encoding.
enum class Fusion { plain, early, late };

inline std::string to_string(Fusion f) {
    switch (f) {
        case Fusion::plain: return "plain";
        case Fusion::early: return "early";
        case Fusion::late: return "late";
    }
    return "plain";
}

inline Fusion parse_fusion(const std::string& s) {
    if (s == "plain") return Fusion::plain;
    if (s == "early") return Fusion::early;
    if (s == "late") return Fusion::late;
    throw ConfigError("unknown fusion mode '" + s + "' (expected plain, early or late)");
}

struct BiLstmConfig {
    int hidden = 64;
    int layers = 3;
    double dropout = 0.3;
    int head_dim = 32;
    Fusion fusion = Fusion::plain;

    int input_channels() const { return kChannels + (fusion == Fusion::early ? 1 : 0); }

    void validate() const {
        if (hidden < 1 || layers < 1 || head_dim < 1) throw ConfigError("BiLSTM dimensions must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("BiLSTM dropout must be in [0, 1)");
    }
};

// Standardized windows plus, for the fusion modes, one uncertainty score each.
struct SequenceSet {
    std::vector<WindowValues> windows;
    std::vector<double> scores;

    std::size_t size() const { return windows.size(); }

    static SequenceSet from_windows(const std::vector<Window>& ws, std::vector<double> scores = {}) {
        SequenceSet s;
        s.windows.reserve(ws.size());
        for (const auto& w : ws) s.windows.push_back(w.values);
        s.scores = std::move(scores);
        return s;
    }
};

// Multi-layer BiLSTM encoder followed by sigmoid(W2 ReLU(W1 h + b1) + b2).
// Late fusion adds w_u * u inside the first head layer, which is the same as
// appending u to h.
class SafetyModel {
public:
    SafetyModel() = default;
    SafetyModel(const BiLstmConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        encoder_ = nn::BiLstm(cfg.input_channels(), cfg.hidden, cfg.layers, cfg.dropout, rng);
        head1_ = nn::Dense("head.fc1", 2 * cfg.hidden, cfg.head_dim, rng);
        if (cfg.fusion == Fusion::late)
            fusion_ = nn::Parameter("head.fusion.weight", nn::uniform_init(cfg.head_dim, 1, 2 * cfg.hidden + 1, rng));
        head2_ = nn::Dense("head.fc2", cfg.head_dim, 1, rng);
    }

    const BiLstmConfig& config() const { return cfg_; }
    Fusion fusion() const { return cfg_.fusion; }
    nn::BiLstm& encoder() { return encoder_; }
    nn::Dense& head_in() { return head1_; }
    nn::Dense& head_out() { return head2_; }
    nn::Parameter& fusion_weight() { return fusion_; }

    nn::ParameterRefs parameters() {
        nn::ParameterRefs out;
        encoder_.collect(out);
        head1_.collect(out);
        if (cfg_.fusion == Fusion::late) out.push_back(&fusion_);
        head2_.collect(out);
        return out;
    }

    nn::ConstParameterRefs parameters() const {
        nn::ConstParameterRefs out;
        encoder_.collect(out);
        head1_.collect(out);
        if (cfg_.fusion == Fusion::late) out.push_back(&fusion_);
        head2_.collect(out);
        return out;
    }

    std::size_t parameter_count() const { return nn::parameter_count(parameters()); }

    // --- BinaryModel interface -------------------------------------------
    std::size_t batch_size_of(const SequenceSet& data) const { return data.size(); }

    nn::Matrix forward(const SequenceSet& data, const std::vector<std::size_t>& idx, bool training, Rng& rng) {
        const auto [x, u] = make_batch(data, idx);
        return run(x, u, training, &rng, &cache_);
    }

    void backward(const nn::Matrix& dlogit) {
        auto& c = cache_;
        nn::Matrix d = head2_.backward(c.head_act, dlogit);
        d = nn::relu_backward(c.head_pre, d);
        if (cfg_.fusion == Fusion::late) fusion_.grad.noalias() += d * c.scores.transpose();
        const nn::Matrix d_enc = head1_.backward(c.encoding, d);
        encoder_.backward(c.encoder, d_enc);
    }

    std::vector<double> logits(const SequenceSet& data) const {
        std::vector<double> out;
        out.reserve(data.size());
        constexpr std::size_t kChunk = 512;
        for (std::size_t start = 0; start < data.size(); start += kChunk) {
            std::vector<std::size_t> idx;
            for (std::size_t i = start; i < std::min(data.size(), start + kChunk); ++i) idx.push_back(i);
            const auto [x, u] = make_batch(data, idx);
            const nn::Matrix z = run(x, u, false, nullptr, nullptr);
            out.insert(out.end(), z.data(), z.data() + z.size());
        }
        return out;
    }

    // Probability of "unsafe" for a single window.
    double predict_one(const WindowValues& window, std::optional<double> score = std::nullopt) const {
        SequenceSet one;
        one.windows.push_back(window);
        if (score) one.scores.push_back(*score);
        const auto [x, u] = make_batch(one, {0});
        return nn::sigmoid(run(x, u, false, nullptr, nullptr)(0, 0));
    }

    // Top-layer encoding [h_fwd(T-1); h_bwd(0)], one column per window.
    nn::Matrix encode(const SequenceSet& data) const {
        std::vector<std::size_t> idx(data.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        const auto [x, u] = make_batch(data, idx);
        return encoder_.encode(x, false, nullptr, nullptr);
    }

    nn::SequenceBatch batch(const SequenceSet& data, const std::vector<std::size_t>& idx) const { return make_batch(data, idx).first; }

    // Model file -----------------------------------------------------------
    nn::ModelFile to_file(const ChannelStats& stats) const {
        nn::ModelFile f;
        f.kind = "bilstm-safety-v1";
        f.meta["hidden"] = std::to_string(cfg_.hidden);
        f.meta["layers"] = std::to_string(cfg_.layers);
        f.meta["dropout"] = csv::format_double(cfg_.dropout);
        f.meta["head_dim"] = std::to_string(cfg_.head_dim);
        f.meta["fusion"] = to_string(cfg_.fusion);
        std::string mean, sd;
        for (std::size_t c = 0; c < stats.channels(); ++c) {
            mean += (c ? " " : "") + nn::hexfloat(stats.mean[c]);
            sd += (c ? " " : "") + nn::hexfloat(stats.stddev[c]);
        }
        f.meta["channel_mean"] = mean;
        f.meta["channel_std"] = sd;
        nn::export_params(f, parameters());
        return f;
    }

    static SafetyModel from_file(const nn::ModelFile& f, ChannelStats* stats = nullptr) {
        if (f.kind != "bilstm-safety-v1") throw ParseError(f.kind, 0, "expected a bilstm-safety-v1 model");
        BiLstmConfig cfg;
        cfg.hidden = std::stoi(f.meta_value("hidden"));
        cfg.layers = std::stoi(f.meta_value("layers"));
        cfg.dropout = std::stod(f.meta_value("dropout"));
        cfg.head_dim = std::stoi(f.meta_value("head_dim"));
        cfg.fusion = parse_fusion(f.meta_value("fusion"));
        Rng rng(0);
        SafetyModel m(cfg, rng);
        nn::import_params(f, m.parameters());
        if (stats) {
            auto parse = [](const std::string& s) {
                std::vector<double> v;
                std::istringstream in(s);
                std::string tok;
                while (in >> tok) v.push_back(std::strtod(tok.c_str(), nullptr));
                return v;
            };
            stats->mean = parse(f.meta_value("channel_mean"));
            stats->stddev = parse(f.meta_value("channel_std"));
        }
        return m;
    }

private:
    struct Cache {
        nn::BiLstm::Cache encoder;
        nn::Matrix encoding, scores, head_pre, head_act;
    };

    std::pair<nn::SequenceBatch, nn::Matrix> make_batch(const SequenceSet& data, const std::vector<std::size_t>& idx) const {
        const bool needs_scores = cfg_.fusion != Fusion::plain;
        if (needs_scores && data.scores.size() != data.windows.size())
            throw ContractViolation("fusion mode '" + to_string(cfg_.fusion) + "' needs one uncertainty score per window");
        const Eigen::Index B = static_cast<Eigen::Index>(idx.size());
        if (B == 0) throw ContractViolation("empty batch");
        const Eigen::Index T = data.windows[idx.front()].rows();
        const Eigen::Index C = cfg_.input_channels();
        nn::SequenceBatch x{nn::Matrix(C, T * B), T, B};
        nn::Matrix u = nn::Matrix::Zero(1, B);
        for (Eigen::Index b = 0; b < B; ++b) {
            const auto& w = data.windows[idx[static_cast<std::size_t>(b)]];
            if (w.rows() != T) throw ContractViolation("windows in a batch must share a length");
            if (w.cols() != kChannels)
                throw ContractViolation("safety model expects " + std::to_string(kChannels) + "-channel windows");
            if (needs_scores) u(0, b) = data.scores[idx[static_cast<std::size_t>(b)]];
            for (Eigen::Index t = 0; t < T; ++t) {
                for (Eigen::Index c = 0; c < kChannels; ++c) x.values(c, t * B + b) = w(t, c);
                if (cfg_.fusion == Fusion::early) x.values(kChannels, t * B + b) = u(0, b);
            }
        }
        return {std::move(x), std::move(u)};
    }

    nn::Matrix run(const nn::SequenceBatch& x, const nn::Matrix& u, bool training, Rng* rng, Cache* cache) const {
        if (x.values.rows() != encoder_.input_size())
            throw ContractViolation("input has " + std::to_string(x.values.rows()) + " channels, model expects " +
                                    std::to_string(encoder_.input_size()));
        Cache local;
        Cache& c = cache ? *cache : local;
        c.encoding = encoder_.encode(x, training, rng, cache ? &c.encoder : nullptr);
        c.head_pre = head1_.forward(c.encoding);
        if (cfg_.fusion == Fusion::late) {
            c.scores = u;
            c.head_pre.noalias() += fusion_.value * u;
        }
        c.head_act = nn::relu(c.head_pre);
        return head2_.forward(c.head_act);
    }

    BiLstmConfig cfg_;
    nn::BiLstm encoder_;
    nn::Dense head1_;
    nn::Parameter fusion_;
    nn::Dense head2_;
    Cache cache_;
};

struct SafetyTrainConfig {
    BiLstmConfig model;
    nn::AdamWConfig optim{1e-2, 1e-4, 0.9, 0.999, 1e-8, 256, 50, 1.0};
};

// Trains on standardized windows. `sample_weights` is empty for plain BCE.
inline TrainResult<SafetyModel> train_safety(const std::vector<Window>& train, const std::vector<Window>& val,
                                            const SafetyTrainConfig& cfg, const std::vector<double>& train_scores,
                                            const std::vector<double>& val_scores,
                                            const std::vector<double>& sample_weights, std::uint64_t seed) {
    if (train.empty()) throw ConfigError("safety predictor: empty training set");
    const bool fused = cfg.model.fusion != Fusion::plain;
    if (fused && (train_scores.size() != train.size() || val_scores.size() != val.size()))
        throw ContractViolation("fusion training needs one uncertainty score per window");
    Rng init_rng(derive_seed(seed, "safety.init"));
    Rng train_rng(derive_seed(seed, "safety.train"));
    SafetyModel model(cfg.model, init_rng);
    return fit_binary(std::move(model), SequenceSet::from_windows(train, fused ? train_scores : std::vector<double>{}),
                      safety_labels(train), sample_weights,
                      SequenceSet::from_windows(val, fused ? val_scores : std::vector<double>{}), safety_labels(val),
                      cfg.optim, train_rng);
}

struct PredictionBatch {
    std::vector<double> probabilities;
    double mean_latency_s = 0.0;  // wall clock per window
};

// One window at a time so the latency figure is per sample. Dropout off.
inline PredictionBatch predict_all(const SafetyModel& model, const std::vector<Window>& windows,
                                   const std::vector<double>& scores = {}) {
    PredictionBatch out;
    if (windows.empty()) return out;
    const bool fused = model.fusion() != Fusion::plain;
    if (fused && scores.size() != windows.size()) throw ContractViolation("fusion inference needs one score per window");
    out.probabilities.reserve(windows.size());
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < windows.size(); ++i)
        out.probabilities.push_back(model.predict_one(windows[i].values, fused ? std::optional<double>(scores[i]) : std::nullopt));
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    out.mean_latency_s = elapsed.count() / static_cast<double>(windows.size());
    return out;
}

}  // namespace ubalance
