#pragma once

#include <string>
#include <vector>

#include "nncore.hpp"
#include "rng.hpp"

namespace ubalance::nn {

// Sequences are stored as one matrix of width T*B: the block of columns
// [t*B, (t+1)*B) holds timestep t for every sample of the batch.
struct SequenceBatch {
    Matrix values;  // features x (T*B)
    Eigen::Index steps = 0;
    Eigen::Index batch = 0;

    auto step(Eigen::Index t) { return values.middleCols(t * batch, batch); }
    auto step(Eigen::Index t) const { return values.middleCols(t * batch, batch); }
};

// One direction of an LSTM layer. Gate rows are ordered (input, forget,
// cell candidate, output):
//
//   z = W_ih x_t + W_hh h_{t-1} + b
//   i = sigmoid(z_i), f = sigmoid(z_f), g = tanh(z_g), o = sigmoid(z_o)
//   c_t = f * c_{t-1} + i * g
//   h_t = o * tanh(c_t)
class LstmDirection {
public:
    LstmDirection() = default;
    LstmDirection(const std::string& name, Eigen::Index in, Eigen::Index hidden, bool reverse, Rng& rng)
        : w_ih_(name + ".w_ih", uniform_init(4 * hidden, in, hidden, rng)),
          w_hh_(name + ".w_hh", uniform_init(4 * hidden, hidden, hidden, rng)),
          bias_(name + ".bias", Matrix::Zero(4 * hidden, 1)),
          hidden_(hidden),
          reverse_(reverse) {
        bias_.value.middleRows(hidden, hidden).setConstant(1.0);  // forget gate
    }

    Eigen::Index hidden() const { return hidden_; }
    Eigen::Index input_size() const { return w_ih_.value.cols(); }
    bool reversed() const { return reverse_; }

    void collect(ParameterRefs& out) {
        out.push_back(&w_ih_);
        out.push_back(&w_hh_);
        out.push_back(&bias_);
    }
    void collect(ConstParameterRefs& out) const {
        out.push_back(&w_ih_);
        out.push_back(&w_hh_);
        out.push_back(&bias_);
    }

    struct Cache {
        SequenceBatch input;
        Matrix gates;   // activated gates, 4H x (T*B)
        Matrix cells;   // c_t, H x (T*B)
        Matrix tanh_c;  // tanh(c_t)
        Matrix hidden;  // h_t
    };

    // Returns h_t for every t (H x T*B), indexed by actual timestep.
    Matrix forward(const SequenceBatch& x, Cache* cache) const {
        if (x.values.rows() != input_size()) throw ContractViolation("lstm " + w_ih_.name + ": input width mismatch");
        const Eigen::Index T = x.steps, B = x.batch, H = hidden_;
        Matrix pre = w_ih_.value * x.values;
        pre.colwise() += bias_.value.col(0);
        Matrix gates(4 * H, T * B), cells(H, T * B), tanh_c(H, T * B), hs(H, T * B);
        Matrix h_prev = Matrix::Zero(H, B), c_prev = Matrix::Zero(H, B);
        for (Eigen::Index s = 0; s < T; ++s) {
            const Eigen::Index t = reverse_ ? T - 1 - s : s;
            Matrix z = pre.middleCols(t * B, B);
            z.noalias() += w_hh_.value * h_prev;
            auto g = gates.middleCols(t * B, B);
            g.topRows(2 * H) = sigmoid(z.topRows(2 * H));
            g.middleRows(2 * H, H) = z.middleRows(2 * H, H).array().tanh().matrix();
            g.bottomRows(H) = sigmoid(z.bottomRows(H));
            auto c = cells.middleCols(t * B, B);
            c = (g.middleRows(H, H).array() * c_prev.array() + g.topRows(H).array() * g.middleRows(2 * H, H).array()).matrix();
            auto tc = tanh_c.middleCols(t * B, B);
            tc = c.array().tanh().matrix();
            auto h = hs.middleCols(t * B, B);
            h = (g.bottomRows(H).array() * tc.array()).matrix();
            h_prev = h;
            c_prev = c;
        }
        if (cache) {
            cache->input = x;
            cache->gates = std::move(gates);
            cache->cells = std::move(cells);
            cache->tanh_c = std::move(tanh_c);
            cache->hidden = hs;
        }
        return hs;
    }

    // d_hidden: dL/dh_t for every t (H x T*B). Accumulates parameter
    // gradients and returns dL/dx (in x T*B).
    Matrix backward(const Cache& cache, const Matrix& d_hidden) {
        const Eigen::Index T = cache.input.steps, B = cache.input.batch, H = hidden_;
        Matrix dz_all(4 * H, T * B);
        Matrix dh_next = Matrix::Zero(H, B), dc_next = Matrix::Zero(H, B);
        for (Eigen::Index s = T - 1; s >= 0; --s) {
            const Eigen::Index t = reverse_ ? T - 1 - s : s;
            const Eigen::Index t_prev = reverse_ ? t + 1 : t - 1;  // previous in processing order
            const bool has_prev = s > 0;
            const auto g = cache.gates.middleCols(t * B, B);
            const auto tc = cache.tanh_c.middleCols(t * B, B);
            const auto gi = g.topRows(H).array();
            const auto gf = g.middleRows(H, H).array();
            const auto gg = g.middleRows(2 * H, H).array();
            const auto go = g.bottomRows(H).array();

            const Matrix dh = d_hidden.middleCols(t * B, B) + dh_next;
            const Matrix dc = (dc_next.array() + dh.array() * go * (1.0 - tc.array().square())).matrix();
            auto dz = dz_all.middleCols(t * B, B);
            dz.bottomRows(H) = (dh.array() * tc.array() * go * (1.0 - go)).matrix();
            dz.topRows(H) = (dc.array() * gg * gi * (1.0 - gi)).matrix();
            dz.middleRows(2 * H, H) = (dc.array() * gi * (1.0 - gg.square())).matrix();
            if (has_prev) {
                const auto c_prev = cache.cells.middleCols(t_prev * B, B).array();
                dz.middleRows(H, H) = (dc.array() * c_prev * gf * (1.0 - gf)).matrix();
                const auto h_prev = cache.hidden.middleCols(t_prev * B, B);
                w_hh_.grad.noalias() += dz * h_prev.transpose();
            } else {
                dz.middleRows(H, H).setZero();
            }
            dh_next.noalias() = w_hh_.value.transpose() * dz;
            dc_next = (dc.array() * gf).matrix();
        }
        w_ih_.grad.noalias() += dz_all * cache.input.values.transpose();
        bias_.grad.col(0) += dz_all.rowwise().sum();
        return w_ih_.value.transpose() * dz_all;
    }

private:
    Parameter w_ih_, w_hh_, bias_;
    Eigen::Index hidden_ = 0;
    bool reverse_ = false;
};

// Stacked bidirectional LSTM. Each layer's output at t is [h_fwd(t); h_bwd(t)];
// inverted dropout is applied to the outputs feeding the next layer. The
// encoding is [final forward state; final backward state] of the top layer,
// i.e. h_fwd(T-1) and h_bwd(0).
class BiLstm {
public:
    BiLstm() = default;
    BiLstm(Eigen::Index input, Eigen::Index hidden, int layers, double dropout, Rng& rng) : dropout_(dropout) {
        if (layers < 1 || hidden < 1) throw ConfigError("BiLSTM needs at least one layer and hidden >= 1");
        Eigen::Index in = input;
        for (int l = 0; l < layers; ++l) {
            const std::string name = "lstm.l" + std::to_string(l);
            forward_.emplace_back(name + ".fwd", in, hidden, false, rng);
            backward_.emplace_back(name + ".bwd", in, hidden, true, rng);
            in = 2 * hidden;
        }
    }

    int layers() const { return static_cast<int>(forward_.size()); }
    Eigen::Index hidden() const { return forward_.front().hidden(); }
    Eigen::Index input_size() const { return forward_.front().input_size(); }
    Eigen::Index output_size() const { return 2 * hidden(); }

    LstmDirection& direction(int layer, bool reverse) { return reverse ? backward_[layer] : forward_[layer]; }

    void collect(ParameterRefs& out) {
        for (std::size_t l = 0; l < forward_.size(); ++l) {
            forward_[l].collect(out);
            backward_[l].collect(out);
        }
    }
    void collect(ConstParameterRefs& out) const {
        for (std::size_t l = 0; l < forward_.size(); ++l) {
            forward_[l].collect(out);
            backward_[l].collect(out);
        }
    }

    struct Cache {
        std::vector<LstmDirection::Cache> fwd, bwd;
        std::vector<DropoutMask> masks;  // masks[l] applies to layer l's output, l < L-1
    };

    Matrix encode(const SequenceBatch& x, bool training, Rng* rng, Cache* cache) const {
        const auto L = forward_.size();
        if (cache) {
            cache->fwd.assign(L, {});
            cache->bwd.assign(L, {});
            cache->masks.assign(L, {});
        }
        SequenceBatch in = x;
        Matrix encoding;
        for (std::size_t l = 0; l < L; ++l) {
            const Matrix hf = forward_[l].forward(in, cache ? &cache->fwd[l] : nullptr);
            const Matrix hb = backward_[l].forward(in, cache ? &cache->bwd[l] : nullptr);
            const Eigen::Index H = hf.rows(), B = in.batch, T = in.steps;
            if (l + 1 == L) {
                encoding.resize(2 * H, B);
                encoding.topRows(H) = hf.middleCols((T - 1) * B, B);
                encoding.bottomRows(H) = hb.middleCols(0, B);
                break;
            }
            SequenceBatch next{Matrix(2 * H, T * B), T, B};
            next.values.topRows(H) = hf;
            next.values.bottomRows(H) = hb;
            if (training && rng) {
                DropoutMask mask = make_dropout(next.values.rows(), next.values.cols(), dropout_, true, *rng);
                next.values = mask.apply(next.values);
                if (cache) cache->masks[l] = std::move(mask);
            }
            in = std::move(next);
        }
        return encoding;
    }

    // d_encoding: dL/d(encoding), 2H x B. Returns dL/d(input sequence).
    Matrix backward(const Cache& cache, const Matrix& d_encoding) {
        const auto L = forward_.size();
        const Eigen::Index H = hidden();
        const Eigen::Index T = cache.fwd.back().input.steps, B = cache.fwd.back().input.batch;
        Matrix d_out = Matrix::Zero(2 * H, T * B);
        d_out.block(0, (T - 1) * B, H, B) = d_encoding.topRows(H);
        d_out.block(H, 0, H, B) = d_encoding.bottomRows(H);
        Matrix d_in;
        for (std::size_t l = L; l-- > 0;) {
            d_in = forward_[l].backward(cache.fwd[l], d_out.topRows(H));
            d_in += backward_[l].backward(cache.bwd[l], d_out.bottomRows(H));
            if (l > 0) d_out = cache.masks[l - 1].backward(d_in);
        }
        return d_in;
    }

private:
    std::vector<LstmDirection> forward_, backward_;
    double dropout_ = 0.0;
};

}  // namespace ubalance::nn
