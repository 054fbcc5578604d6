#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "rng.hpp"

namespace ubalance::nn {

// Activations are laid out feature-major: one column per sample.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
    Eigen::Index size() const { return value.size(); }
};

using ParameterRefs = std::vector<Parameter*>;
using ConstParameterRefs = std::vector<const Parameter*>;

template <typename Refs>
std::size_t parameter_count(const Refs& params) {
    std::size_t n = 0;
    for (const auto* p : params) n += static_cast<std::size_t>(p->size());
    return n;
}

inline void zero_grads(const ParameterRefs& params) {
    for (auto* p : params) p->zero_grad();
}

// Uniform in +-1/sqrt(fan_in).
inline Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(fan_in, 1)));
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(-bound, bound);
    return m;
}

// ============================================================================
// Dense layer: y = W x + b
// ============================================================================
struct Dense {
    Parameter weight;
    Parameter bias;

    Dense() = default;
    Dense(const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng)
        : weight(name + ".weight", uniform_init(out, in, in, rng)), bias(name + ".bias", Matrix::Zero(out, 1)) {}

    Eigen::Index in_features() const { return weight.value.cols(); }
    Eigen::Index out_features() const { return weight.value.rows(); }

    Matrix forward(const Matrix& x) const {
        if (x.rows() != in_features()) throw ContractViolation("dense " + weight.name + ": input width mismatch");
        Matrix y = weight.value * x;
        y.colwise() += bias.value.col(0);
        return y;
    }

    // Accumulates parameter gradients and returns dL/dx.
    Matrix backward(const Matrix& x, const Matrix& dy) {
        if (dy.rows() != out_features() || dy.cols() != x.cols())
            throw ContractViolation("dense " + weight.name + ": gradient shape mismatch");
        weight.grad.noalias() += dy * x.transpose();
        bias.grad.col(0) += dy.rowwise().sum();
        return weight.value.transpose() * dy;
    }

    void collect(ParameterRefs& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
    void collect(ConstParameterRefs& out) const {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

// ============================================================================
// Elementwise primitives
// ============================================================================
inline Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

inline Matrix relu_backward(const Matrix& pre, const Matrix& dy) {
    return (pre.array() > 0.0).select(dy, 0.0);
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Matrix sigmoid(const Matrix& x) { return x.unaryExpr([](double v) { return sigmoid(v); }); }

// Takes the forward output, not the input.
inline Matrix sigmoid_backward(const Matrix& out, const Matrix& dy) {
    return (dy.array() * out.array() * (1.0 - out.array())).matrix();
}

inline Matrix tanh(const Matrix& x) { return x.array().tanh().matrix(); }

inline Matrix tanh_backward(const Matrix& out, const Matrix& dy) {
    return (dy.array() * (1.0 - out.array().square())).matrix();
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ContractViolation("elementwise product shape mismatch");
    return a.cwiseProduct(b);
}

// Stacks feature blocks vertically (same batch width).
inline Matrix concat_rows(const Matrix& top, const Matrix& bottom) {
    if (top.cols() != bottom.cols()) throw ContractViolation("concatenation batch width mismatch");
    Matrix out(top.rows() + bottom.rows(), top.cols());
    out.topRows(top.rows()) = top;
    out.bottomRows(bottom.rows()) = bottom;
    return out;
}

// Inverted dropout: kept units are scaled by 1/(1-p) at train time. An empty
// mask means identity (evaluation, or p == 0).
struct DropoutMask {
    Matrix scale;

    bool active() const { return scale.size() > 0; }
    Matrix apply(const Matrix& x) const { return active() ? hadamard(x, scale) : x; }
    Matrix backward(const Matrix& dy) const { return active() ? hadamard(dy, scale) : dy; }
};

inline DropoutMask make_dropout(Eigen::Index rows, Eigen::Index cols, double p, bool training, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
    DropoutMask mask;
    if (!training || p == 0.0) return mask;
    mask.scale.resize(rows, cols);
    const double keep = 1.0 / (1.0 - p);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) mask.scale(r, c) = rng.uniform() < p ? 0.0 : keep;
    return mask;
}

// ============================================================================
// Losses
// ============================================================================
struct LossResult {
    double value = 0.0;
    Matrix grad;  // dL/d(input), same shape as the input
};

inline constexpr double kProbClamp = 1e-7;

// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets. Per-sample
// weights multiply each term; the mean is over the batch size. Probabilities
// are clamped to [1e-7, 1 - 1e-7].
inline LossResult bce_with_logits(const Matrix& logits, const std::vector<double>& targets,
                                  const std::vector<double>* weights = nullptr) {
    if (logits.rows() != 1 || static_cast<std::size_t>(logits.cols()) != targets.size())
        throw ContractViolation("bce: logits must be 1 x batch and match the targets");
    if (weights && weights->size() != targets.size()) throw ContractViolation("bce: weight count mismatch");
    const auto n = logits.cols();
    LossResult res;
    res.grad.resize(1, n);
    double total = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const double y = targets[ui];
        const double w = weights ? (*weights)[ui] : 1.0;
        const double p_raw = sigmoid(logits(0, i));
        const double p = std::clamp(p_raw, kProbClamp, 1.0 - kProbClamp);
        total += w * -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
        // The clamp only guards the log; saturated logits keep the sigmoid
        // cross-entropy gradient so a confidently wrong sample still learns.
        res.grad(0, i) = w * (p_raw - y) * inv_n;
    }
    res.value = total * inv_n;
    return res;
}

// Mean squared error, averaged over every element.
inline LossResult squared_error(const Matrix& pred, const Matrix& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ContractViolation("mse shape mismatch");
    LossResult res;
    const Matrix diff = pred - target;
    const double n = static_cast<double>(pred.size());
    res.value = diff.squaredNorm() / n;
    res.grad = diff * (2.0 / n);
    return res;
}

// ============================================================================
// Optimization
// ============================================================================
struct AdamWConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int batch_size = 256;
    int epochs = 30;
    std::optional<double> grad_clip_norm;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("betas must be in [0, 1)");
        if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (epochs < 0) throw ConfigError("epochs must be >= 0");
        if (grad_clip_norm && !(*grad_clip_norm > 0.0)) throw ConfigError("grad_clip_norm must be > 0");
    }
};

// Decoupled weight decay (Loshchilov & Hutter): the decay shrinks the
// parameters directly and never enters the moment estimates.
class AdamW {
public:
    explicit AdamW(const AdamWConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

    long steps() const noexcept { return step_; }

    void step(const ParameterRefs& params) {
        if (first_.empty()) {
            for (const auto* p : params) {
                first_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
                second_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
            }
        }
        if (first_.size() != params.size()) throw ContractViolation("optimizer bound to a different parameter set");
        for (const auto* p : params)
            if (!p->grad.allFinite()) throw TrainingError("non-finite gradient in " + p->name);
        ++step_;
        const double t = static_cast<double>(step_);
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = *params[i];
            auto& m = first_[i];
            auto& v = second_[i];
            if (cfg_.weight_decay != 0.0) p.value *= (1.0 - cfg_.learning_rate * cfg_.weight_decay);
            m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * p.grad;
            v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
            p.value.array() -= cfg_.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.epsilon);
        }
    }

private:
    AdamWConfig cfg_;
    std::vector<Matrix> first_;
    std::vector<Matrix> second_;
    long step_ = 0;
};

inline double global_grad_norm(const ParameterRefs& params) {
    double sq = 0.0;
    for (const auto* p : params) sq += p->grad.squaredNorm();
    return std::sqrt(sq);
}

// Rescales all gradients by max_norm/g when their global L2 norm g exceeds
// max_norm. Returns the norm before clipping.
inline double clip_grad_norm(const ParameterRefs& params, double max_norm = 1.0) {
    if (!(max_norm > 0.0)) throw ConfigError("max_norm must be > 0");
    const double norm = global_grad_norm(params);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto* p : params) p->grad *= scale;
    }
    return norm;
}

// ============================================================================
// Finite-difference gradient verification
// ============================================================================
struct GradCheckReport {
    double max_relative_error = 0.0;
    double max_absolute_error = 0.0;
    std::string worst_parameter;
    Eigen::Index worst_index = -1;
    std::size_t checked = 0;
    double tolerance = 1e-4;

    bool passed() const { return max_relative_error < tolerance; }
};

// Relative error |a - n| / max(|a| + |n|, floor). The floor keeps entries
// whose true gradient is ~0 from dominating through round-off.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), floor);
}

// `loss_and_grad(bool with_grad)` must evaluate the scalar loss at the current
// parameter values and, when asked, leave analytic gradients in each
// Parameter::grad. It must be deterministic (dropout off or fixed masks).
inline GradCheckReport check_gradients(const std::function<double(bool)>& loss_and_grad, const ParameterRefs& params,
                                       double tolerance = 1e-4, double h = 1e-5) {
    GradCheckReport report;
    report.tolerance = tolerance;
    zero_grads(params);
    loss_and_grad(true);
    std::vector<Matrix> analytic;
    analytic.reserve(params.size());
    for (const auto* p : params) analytic.push_back(p->grad);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = *params[k];
        for (Eigen::Index i = 0; i < p.value.size(); ++i) {
            const double saved = p.value.data()[i];
            p.value.data()[i] = saved + h;
            const double up = loss_and_grad(false);
            p.value.data()[i] = saved - h;
            const double down = loss_and_grad(false);
            p.value.data()[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[k].data()[i];
            const double rel = relative_error(a, numeric);
            ++report.checked;
            report.max_absolute_error = std::max(report.max_absolute_error, std::abs(a - numeric));
            if (rel >= report.max_relative_error) {
                report.max_relative_error = rel;
                report.worst_parameter = p.name;
                report.worst_index = i;
            }
        }
    }
    return report;
}

}  // namespace ubalance::nn
