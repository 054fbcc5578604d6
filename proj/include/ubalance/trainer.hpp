#pragma once

#include <cmath>
#include <concepts>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "error.hpp"
#include "metrics.hpp"
#include "nncore.hpp"
#include "rng.hpp"

namespace ubalance {

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_f1 = 0.0;
};

template <typename Model>
struct TrainResult {
    Model model;
    std::vector<EpochLog> log;
    int best_epoch = 0;  // 0 when no epoch ran
    double best_val_f1 = 0.0;
};

// What the binary trainer needs from a model. `Data` is whatever the model
// batches from (a feature matrix, a set of sequences).
template <typename M, typename Data>
concept BinaryModel = requires(M m, const M cm, const Data& data, const std::vector<std::size_t>& idx, bool training,
                               Rng& rng, const nn::Matrix& grad) {
    { cm.batch_size_of(data) } -> std::convertible_to<std::size_t>;
    { m.forward(data, idx, training, rng) } -> std::convertible_to<nn::Matrix>;
    m.backward(grad);
    { m.parameters() } -> std::convertible_to<nn::ParameterRefs>;
    { cm.logits(data) } -> std::convertible_to<std::vector<double>>;
};

inline std::vector<double> sigmoid_all(const std::vector<double>& logits) {
    std::vector<double> out;
    out.reserve(logits.size());
    for (double z : logits) out.push_back(nn::sigmoid(z));
    return out;
}

// Mini-batch AdamW on mean BCE of sigmoid(logit) against 0/1 labels.
// Indices are reshuffled every epoch; the last short batch is kept. After
// each epoch the model is scored on validation F1 (p >= 0.5) and the best
// epoch's parameters are returned (earliest on ties; with an empty
// validation set the last epoch wins).
template <typename Model, typename Data>
    requires BinaryModel<Model, Data>
TrainResult<Model> fit_binary(Model model, const Data& train, const std::vector<int>& train_labels,
                              const std::vector<double>& sample_weights, const Data& val,
                              const std::vector<int>& val_labels, const nn::AdamWConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t n = model.batch_size_of(train);
    if (n == 0) throw ConfigError("training set is empty");
    if (train_labels.size() != n) throw ContractViolation("train labels do not match the training set");
    if (!sample_weights.empty() && sample_weights.size() != n) throw ContractViolation("sample weights do not match");
    if (val_labels.size() != model.batch_size_of(val)) throw ContractViolation("validation labels do not match");

    TrainResult<Model> result{model, {}, 0, 0.0};
    double best = -std::numeric_limits<double>::infinity();
    nn::AdamW opt(cfg);
    const auto params = model.parameters();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(end));
            std::vector<double> targets, weights;
            targets.reserve(idx.size());
            for (auto i : idx) {
                targets.push_back(static_cast<double>(train_labels[i]));
                if (!sample_weights.empty()) weights.push_back(sample_weights[i]);
            }
            nn::zero_grads(params);
            const nn::Matrix logits = model.forward(train, idx, true, rng);
            const auto loss = nn::bce_with_logits(logits, targets, sample_weights.empty() ? nullptr : &weights);
            if (!std::isfinite(loss.value))
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch));
            model.backward(loss.grad);
            if (cfg.grad_clip_norm) nn::clip_grad_norm(params, *cfg.grad_clip_norm);
            opt.step(params);
            loss_sum += loss.value * static_cast<double>(idx.size());
        }
        EpochLog entry{epoch, loss_sum / static_cast<double>(n), 0.0};
        if (!val_labels.empty()) entry.val_f1 = metrics::f1_score(sigmoid_all(model.logits(val)), val_labels);
        result.log.push_back(entry);
        const bool better = val_labels.empty() ? true : entry.val_f1 > best;
        if (better) {
            best = entry.val_f1;
            result.model = model;
            result.best_epoch = epoch;
            result.best_val_f1 = entry.val_f1;
        }
    }
    return result;
}

}  // namespace ubalance
