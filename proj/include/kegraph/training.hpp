#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kegraph/metrics.hpp"
#include "kegraph/model.hpp"
#include "kegraph/optim.hpp"
#include "kegraph/tape.hpp"

namespace kegraph {

// Probabilities are clamped here before the log so saturated sigmoids cannot
// produce -inf; the clamp floor is far below any trainable signal.
constexpr double kProbFloor = 1e-12;

namespace detail {

// Constant mask with M(i, y_i) = w_{y_i}, used to pick the labeled column.
inline Tensor label_mask(const std::vector<uint8_t>& labels, const std::vector<uint32_t>& subset,
                         const ClassWeights& w) {
    Tensor m(subset.size(), 2);
    for (size_t i = 0; i < subset.size(); ++i) {
        const uint8_t y = labels[subset[i]];
        m.at(i, y == 0 ? 0 : 1) = w.of(y);
    }
    return m;
}

}  // namespace detail

// Weighted cross-entropy over the subset rows of yhat (all-node predictions).
inline Var build_wce_loss(Tape& tape, Var yhat, const std::vector<uint8_t>& labels,
                          const std::vector<uint32_t>& subset, const ClassWeights& w) {
    Var ys = tape.select_rows(yhat, subset);
    Var logp = tape.log_op(tape.clamp_min(ys, kProbFloor));
    Var picked = tape.mul(logp, tape.input(detail::label_mask(labels, subset, w)));
    return tape.scale(tape.sum_all(picked), -1.0 / static_cast<double>(subset.size()));
}

// Forward-corrected loss: the per-node transition matrix [[1,0],[g,1-g]]
// turns yhat into (y0 + g*y1, y1*(1-g)) before the cross-entropy. gamma holds
// one value per subset entry and is constant w.r.t. the model.
inline Var build_corrected_loss(Tape& tape, Var yhat, const std::vector<uint8_t>& labels,
                                const std::vector<uint32_t>& subset,
                                const std::vector<double>& gamma, const ClassWeights& w) {
    if (gamma.size() != subset.size())
        throw DimensionError("build_corrected_loss: gamma size must match subset");
    Tensor g(subset.size(), 1), one_minus_g(subset.size(), 1);
    for (size_t i = 0; i < gamma.size(); ++i) {
        if (gamma[i] < 0.0 || gamma[i] >= 1.0)
            throw DomainError("build_corrected_loss: gamma outside [0,1)");
        g.at(i, 0) = gamma[i];
        one_minus_g.at(i, 0) = 1.0 - gamma[i];
    }
    Var ys = tape.select_rows(yhat, subset);
    Var y0 = tape.select_col(ys, 0);
    Var y1 = tape.select_col(ys, 1);
    Var p0 = tape.add(y0, tape.mul(tape.input(g), y1));
    Var p1 = tape.mul(y1, tape.input(one_minus_g));
    Var corrected = tape.concat_cols(p0, p1);
    Var logp = tape.log_op(tape.clamp_min(corrected, kProbFloor));
    Var picked = tape.mul(logp, tape.input(detail::label_mask(labels, subset, w)));
    return tape.scale(tape.sum_all(picked), -1.0 / static_cast<double>(subset.size()));
}

// Confidence-regularized loss for the reference model. Cross-entropy terms
// are computed on the normalized output pair q = yhat / (yhat0 + yhat1): with
// per-logit sigmoid outputs the unnormalized regularizer would be unbounded
// below. The per-sample value is
//   l_i = -w_y log q_y + (beta/2)(log q_0 + log q_1)
inline Var build_sieve_loss(Tape& tape, Var yhat, const std::vector<uint8_t>& labels,
                            const std::vector<uint32_t>& subset, const ClassWeights& w,
                            double beta) {
    Var ys = tape.select_rows(yhat, subset);
    Var s = tape.row_sum(ys);
    Var q = tape.div(ys, tape.concat_cols(s, s));
    Var logq = tape.log_op(tape.clamp_min(q, kProbFloor));
    Var wce = tape.sum_all(tape.mul(logq, tape.input(detail::label_mask(labels, subset, w))));
    Var reg = tape.sum_all(logq);
    Var combined = tape.add(tape.scale(wce, -1.0), tape.scale(reg, 0.5 * beta));
    return tape.scale(combined, 1.0 / static_cast<double>(subset.size()));
}

// Same quantity as build_sieve_loss, per sample, computed outside the tape.
inline std::vector<double> sieve_sample_losses(const Tensor& yhat,
                                               const std::vector<uint8_t>& labels,
                                               const std::vector<uint32_t>& subset,
                                               const ClassWeights& w, double beta) {
    std::vector<double> out(subset.size());
    for (size_t i = 0; i < subset.size(); ++i) {
        const double y0 = yhat.at(subset[i], 0);
        const double y1 = yhat.at(subset[i], 1);
        const double sum = y0 + y1;
        const double q0 = std::max(y0 / sum, kProbFloor);
        const double q1 = std::max(y1 / sum, kProbFloor);
        const uint8_t y = labels[subset[i]];
        out[i] = -w.of(y) * std::log(y == 0 ? q0 : q1) + 0.5 * beta * (std::log(q0) + std::log(q1));
    }
    return out;
}

// Bernoulli likelihood of the observed labels among nodes whose estimated
// Bayes label is fraud: gamma models P(noisy = 0 | bayes = 1).
inline Var build_transition_nll(Tape& tape, Var gamma_all, const std::vector<uint32_t>& nodes,
                                const std::vector<uint8_t>& noisy_labels) {
    if (nodes.empty()) throw TrainingError("transition model: no kept samples with bayes label 1");
    Var g = tape.select_rows(gamma_all, nodes);
    Var log_g = tape.log_op(g);
    Var log_1mg = tape.log_op(tape.add_const(tape.scale(g, -1.0), 1.0));
    Tensor mask(nodes.size(), 2);
    for (size_t i = 0; i < nodes.size(); ++i)
        mask.at(i, noisy_labels[nodes[i]] == 0 ? 0 : 1) = 1.0;
    Var stacked = tape.concat_cols(log_g, log_1mg);
    Var picked = tape.mul(stacked, tape.input(mask));
    return tape.scale(tape.sum_all(picked), -1.0 / static_cast<double>(nodes.size()));
}

struct TrainConfig {
    double lr = 1e-3;
    std::string optimizer = "adam";  // "adam" or "sgd"
    size_t max_epochs = 300;         // hard cap
    size_t patience = 30;            // epochs without validation improvement
    bool keep_final = false;         // return the final state instead of the best-AUC one
};

struct CurvePoint {
    size_t epoch;
    double train_loss;
    double valid_auc;
};

enum class LossMode { Plain, Corrected, Sieve };

struct LossSpec {
    LossMode mode = LossMode::Plain;
    std::vector<double> gamma;  // Corrected: one per training node
    double beta = 0.0;          // Sieve: regularizer weight
    double beta_warmup_frac = 0.10;
};

// Everything a training run needs, with predictions made over all nodes and
// losses restricted to index subsets.
struct ModelData {
    std::vector<const SparseRowMatrix*> subgraphs;
    Tensor x_att, x_ke;
    std::vector<uint8_t> noisy_labels;
    std::vector<uint32_t> train_idx, valid_idx;
    ClassWeights weights;
};

struct FitResult {
    double best_valid_auc = 0.0;
    size_t best_epoch = 0;
    size_t epochs_run = 0;
    std::vector<CurvePoint> curve;
    FusionTrace trace;  // at the best epoch
    Tensor yhat;        // all-node predictions at the best epoch
};

// Full-batch training with early stopping on validation AUC. The model state
// evaluated at epoch e is the state before update e; the best such state is
// restored into the model at the end. The loop itself draws no randomness, so
// identical models and inputs give bit-identical trajectories.
inline FitResult fit_model(KeModel& model, const ModelData& data, const LossSpec& spec,
                           const TrainConfig& tc) {
    if (data.train_idx.empty() || data.valid_idx.empty())
        throw ContractError("fit_model: empty train or valid split");

    SgdOptimizer sgd(tc.lr);
    AdamOptimizer adam(tc.lr);
    const bool use_adam = tc.optimizer == "adam";
    if (!use_adam && tc.optimizer != "sgd")
        throw ConfigError("fit_model: unknown optimizer '" + tc.optimizer + "'");

    const size_t warmup =
        std::max<size_t>(1, static_cast<size_t>(spec.beta_warmup_frac *
                                                static_cast<double>(tc.max_epochs)));

    FitResult res;
    ParamStore best = model.params();
    size_t since_best = 0;

    std::vector<double> valid_scores(data.valid_idx.size());
    std::vector<uint8_t> valid_labels(data.valid_idx.size());
    for (size_t i = 0; i < data.valid_idx.size(); ++i)
        valid_labels[i] = data.noisy_labels[data.valid_idx[i]];

    for (size_t epoch = 0; epoch < tc.max_epochs; ++epoch) {
        Tape tape;
        Var x_att = model.config().use_att ? tape.input(data.x_att) : Var{};
        Var x_ke = model.config().use_ke ? tape.input(data.x_ke) : Var{};
        std::vector<Var> vars = model.param_vars(tape);
        KeModel::ForwardResult fwd = model.forward(tape, vars, data.subgraphs, x_att, x_ke);

        Var loss;
        switch (spec.mode) {
            case LossMode::Plain:
                loss = build_wce_loss(tape, fwd.yhat, data.noisy_labels, data.train_idx,
                                      data.weights);
                break;
            case LossMode::Corrected:
                loss = build_corrected_loss(tape, fwd.yhat, data.noisy_labels, data.train_idx,
                                            spec.gamma, data.weights);
                break;
            case LossMode::Sieve: {
                const double ramp =
                    std::min(1.0, static_cast<double>(epoch + 1) / static_cast<double>(warmup));
                loss = build_sieve_loss(tape, fwd.yhat, data.noisy_labels, data.train_idx,
                                        data.weights, spec.beta * ramp);
                break;
            }
        }

        const Tensor& yhat = tape.value(fwd.yhat);
        for (size_t i = 0; i < data.valid_idx.size(); ++i)
            valid_scores[i] = yhat.at(data.valid_idx[i], 1);
        const double valid_auc = auc(valid_scores, valid_labels);
        res.curve.push_back({epoch, tape.value(loss).scalar_value(), valid_auc});

        if (epoch == 0 || valid_auc > res.best_valid_auc) {
            res.best_valid_auc = valid_auc;
            res.best_epoch = epoch;
            res.trace = fwd.trace;
            res.yhat = yhat;
            best = model.params();
            since_best = 0;
        } else if (++since_best >= tc.patience) {
            res.epochs_run = epoch + 1;
            break;
        }

        tape.backward(loss);
        std::vector<Tensor> grads;
        grads.reserve(vars.size());
        for (Var v : vars) grads.push_back(tape.grad(v));
        if (use_adam)
            adam.step(model.params(), grads);
        else
            sgd.step(model.params(), grads);
        res.epochs_run = epoch + 1;
    }

    if (tc.keep_final) {
        // Leave the last update in place and refresh predictions to match.
        Tape tape;
        Var x_att = model.config().use_att ? tape.input(data.x_att) : Var{};
        Var x_ke = model.config().use_ke ? tape.input(data.x_ke) : Var{};
        std::vector<Var> vars;
        vars.reserve(model.params().count());
        for (size_t i = 0; i < model.params().count(); ++i)
            vars.push_back(tape.input(model.params().value(i)));
        KeModel::ForwardResult fwd = model.forward(tape, vars, data.subgraphs, x_att, x_ke);
        res.yhat = tape.value(fwd.yhat);
        res.trace = fwd.trace;
        res.best_epoch = res.epochs_run;
        for (size_t i = 0; i < data.valid_idx.size(); ++i)
            valid_scores[i] = res.yhat.at(data.valid_idx[i], 1);
        res.best_valid_auc = auc(valid_scores, valid_labels);
    } else {
        model.params() = best;
    }
    return res;
}

}  // namespace kegraph
