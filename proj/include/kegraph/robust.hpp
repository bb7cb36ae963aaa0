#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "kegraph/graph_store.hpp"
#include "kegraph/training.hpp"

namespace kegraph {

struct SieveConfig {
    double beta = 2.0;          // confidence regularizer weight; 0 disables the sieve
    double warmup_frac = 0.10;  // linear ramp of beta over the first epochs
    // Reference-model training knobs. The class-weight temper exponent moves
    // the argmax decision threshold between the class prior (1.0, full
    // inverse-frequency weights) and one half (0.0, unweighted); the learning
    // rate and epoch count control how far past region-level voting the
    // reference fits. Zero means inherit from the main training config.
    double weight_temper = 0.65;
    double ref_lr = 0.0;
    size_t ref_epochs = 0;
};

struct SievedSample {
    uint32_t node = 0;
    uint8_t noisy = 0;  // observed label
    uint8_t bayes = 0;  // estimated Bayes optimal label
    bool kept = false;
};

struct SieveResult {
    std::vector<SievedSample> samples;  // one per training node
    size_t kept_bayes_fraud = 0;
    size_t kept_bayes_nonfraud = 0;
    size_t dropped = 0;
    double reference_valid_auc = 0.0;
};

// Stage I, part 1: trains a throwaway reference model with the
// confidence-regularized loss, assigns Bayes optimal labels by argmax and
// keeps the samples whose regularized per-sample loss is non-positive.
// beta = 0 disables the filter entirely.
inline SieveResult collect_bayes_labels(const ModelConfig& cfg, size_t d_att, size_t d_ke,
                                        const ModelData& data, const SieveConfig& scfg,
                                        const TrainConfig& tcfg, uint64_t seed) {
    KeModel reference(cfg, data.subgraphs.size(), d_att, d_ke, derive_seed(seed, "reference"));
    ModelData ref_data = data;
    {
        const double ratio = data.weights.w1 / data.weights.w0;
        const double tempered = std::pow(ratio, scfg.weight_temper);
        ref_data.weights.w0 = 2.0 / (1.0 + tempered);
        ref_data.weights.w1 = 2.0 * tempered / (1.0 + tempered);
    }
    LossSpec spec;
    spec.mode = LossMode::Sieve;
    // The regularized loss is stable only while beta stays well below
    // 2 * min(class weight); anywhere near that bound the confidence term
    // overwhelms the data term and the reference collapses to one confident
    // class. Training ramps to the capped value; the keep rule below applies
    // the configured beta unchanged.
    spec.beta = std::min(scfg.beta, 0.6 * std::min(ref_data.weights.w0, ref_data.weights.w1));
    spec.beta_warmup_frac = scfg.warmup_frac;
    // The reference runs its full epoch budget: early stopping on the noisy
    // validation AUC tends to halt it while the argmax decisions are still
    // dominated by the initialization.
    TrainConfig ref_tc = tcfg;
    if (scfg.ref_lr > 0.0) ref_tc.lr = scfg.ref_lr;
    if (scfg.ref_epochs > 0) ref_tc.max_epochs = scfg.ref_epochs;
    ref_tc.patience = ref_tc.max_epochs;
    ref_tc.keep_final = true;
    FitResult fit = fit_model(reference, ref_data, spec, ref_tc);

    SieveResult out;
    out.reference_valid_auc = fit.best_valid_auc;
    const std::vector<double> losses =
        sieve_sample_losses(fit.yhat, data.noisy_labels, data.train_idx, data.weights, scfg.beta);
    out.samples.reserve(data.train_idx.size());
    for (size_t i = 0; i < data.train_idx.size(); ++i) {
        SievedSample s;
        s.node = data.train_idx[i];
        s.noisy = data.noisy_labels[s.node];
        s.bayes = fit.yhat.at(s.node, 1) > fit.yhat.at(s.node, 0) ? 1 : 0;
        s.kept = scfg.beta == 0.0 || losses[i] <= 0.0;
        if (s.kept)
            ++(s.bayes ? out.kept_bayes_fraud : out.kept_bayes_nonfraud);
        else
            ++out.dropped;
        out.samples.push_back(s);
    }
    if (out.kept_bayes_fraud == 0 || out.kept_bayes_nonfraud == 0)
        throw TrainingError("sieve failure: kept " + std::to_string(out.kept_bayes_fraud) +
                            " bayes-fraud and " + std::to_string(out.kept_bayes_nonfraud) +
                            " bayes-non-fraud samples (dropped " + std::to_string(out.dropped) +
                            ")");
    return out;
}

struct TransitionConfig {
    size_t hidden = 500;  // MW-GCN layer width
    double lr = 0.01;
    std::string optimizer = "adam";
    size_t epochs = 300;
    double eps = 1e-6;          // clamp: gamma in [eps, 1-eps]
    double weight_decay = 1e-3; // pulls gamma toward its prior away from the fit support
    double init_bias = -2.0;    // head bias: low hidden-fraud rate by default
    // Prior weight anchoring gamma low on kept samples with Bayes label 0:
    // under the asymmetric noise structure those rows carry no hidden mass,
    // and without the anchor the estimate extrapolates arbitrarily off the
    // Bayes-fraud support.
    double nonfraud_prior = 0.3;
    // Independent refits averaged into the final estimate; the NLL surface
    // has many near-equivalent fits off the Bayes-fraud support and a single
    // draw can land on a harmful one.
    size_t ensemble = 5;
    // Structure scale around the applied level: 1 keeps the estimated
    // per-node contrasts, 0 collapses to a class-dependent constant.
    double shrink = 1.0;
    // Level of the applied correction on observed-non-fraud rows: "marginal"
    // recenters the estimates on the hidden rate observed among the kept
    // Bayes-fraud samples, "raw" applies them as fitted.
    bool recenter_marginal = true;
};

// Stage I, part 2: a single MW-GCN layer over the sum-up graph mapping
// financial attributes to the per-node hidden fraud rate.
class TransitionModel {
  public:
    TransitionModel(size_t d_in, size_t hidden, double eps, double init_bias, uint64_t seed)
        : eps_(eps) {
        if (hidden == 0) throw ConfigError("TransitionModel: hidden width must be positive");
        Rng rng(derive_seed(seed, "transition-init"));
        auto glorot = [&rng](size_t r, size_t c) {
            Tensor t(r, c);
            const double limit = std::sqrt(6.0 / static_cast<double>(r + c));
            for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
            return t;
        };
        params_.add("trans.W0", glorot(d_in, hidden));
        params_.add("trans.head.W", glorot(hidden, 1));
        params_.add("trans.head.b", Tensor::scalar(init_bias));
    }

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    double eps() const { return eps_; }

    // N x 1 estimated hidden fraud rates, clamped into [eps, 1-eps].
    Var forward(Tape& tape, const std::vector<Var>& vars, const SparseRowMatrix& sum_norm,
                Var x) const {
        Var h = mwgcn_layer(tape, sum_norm, x, vars[0]);
        Var logits = tape.add_row_bias(tape.matmul(h, vars[1]), vars[2]);
        return tape.clamp(tape.sigmoid(logits), eps_, 1.0 - eps_);
    }

    Tensor predict(const SparseRowMatrix& sum_norm, const Tensor& x_att) const {
        Tape tape;
        Var x = tape.input(x_att);
        std::vector<Var> vars;
        for (size_t i = 0; i < params_.count(); ++i) vars.push_back(tape.input(params_.value(i)));
        return tape.value(forward(tape, vars, sum_norm, x));
    }

  private:
    double eps_;
    ParamStore params_;
};

// Minimizes the Bernoulli negative log-likelihood of the observed labels over
// kept samples with Bayes label fraud; samples with Bayes label non-fraud
// carry a fixed transition row and contribute nothing. The returned model is
// frozen by convention: stage II only calls predict().
inline TransitionModel train_transition_model(const SieveResult& sieve,
                                              const SparseRowMatrix& sum_norm,
                                              const Tensor& x_att, const TransitionConfig& cfg,
                                              uint64_t seed) {
    std::vector<uint32_t> nodes, anchor_nodes;
    std::vector<uint8_t> noisy(x_att.rows(), 0);
    for (const SievedSample& s : sieve.samples) {
        noisy[s.node] = s.noisy;
        if (s.kept && s.bayes == 1) nodes.push_back(s.node);
        if (s.kept && s.bayes == 0) anchor_nodes.push_back(s.node);
    }
    if (nodes.empty())
        throw TrainingError("train_transition_model: no kept samples with bayes label 1");

    TransitionModel model(x_att.cols(), cfg.hidden, cfg.eps, cfg.init_bias, seed);
    SgdOptimizer sgd(cfg.lr);
    AdamOptimizer adam(cfg.lr);
    const bool use_adam = cfg.optimizer == "adam";
    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Tape tape;
        Var x = tape.input(x_att);
        std::vector<Var> vars;
        for (size_t i = 0; i < model.params().count(); ++i)
            vars.push_back(tape.input(model.params().value(i), true));
        Var gamma = model.forward(tape, vars, sum_norm, x);
        Var loss = build_transition_nll(tape, gamma, nodes, noisy);
        if (cfg.nonfraud_prior > 0.0 && !anchor_nodes.empty()) {
            Var ga = tape.select_rows(gamma, anchor_nodes);
            Var log_1mg = tape.log_op(tape.add_const(tape.scale(ga, -1.0), 1.0));
            Var prior = tape.scale(tape.sum_all(log_1mg),
                                   -cfg.nonfraud_prior / static_cast<double>(anchor_nodes.size()));
            loss = tape.add(loss, prior);
        }
        if (!std::isfinite(tape.value(loss).scalar_value()))
            throw NumericError("train_transition_model: non-finite loss");
        tape.backward(loss);
        std::vector<Tensor> grads;
        for (Var v : vars) grads.push_back(tape.grad(v));
        // decoupled weight decay on the two weight matrices (not the bias)
        if (cfg.weight_decay > 0.0) {
            for (size_t p = 0; p < 2; ++p) {
                Tensor& w = model.params().value(p);
                Tensor& g = grads[p];
                for (size_t i = 0; i < w.size(); ++i) g[i] += cfg.weight_decay * w[i];
            }
        }
        if (use_adam)
            adam.step(model.params(), grads);
        else
            sgd.step(model.params(), grads);
    }
    return model;
}

// T*(v) for one node: rows indexed by the Bayes label, columns by the
// observed label, both ordered (non-fraud, fraud).
inline Tensor transition_matrix(double gamma) {
    if (!(gamma > 0.0 && gamma < 1.0))
        throw DomainError("transition_matrix: gamma must lie strictly inside (0,1)");
    Tensor t(2, 2);
    t.at(0, 0) = 1.0;
    t.at(0, 1) = 0.0;
    t.at(1, 0) = gamma;
    t.at(1, 1) = 1.0 - gamma;
    return t;
}

// Value of the corrected loss for already-computed predictions; the training
// path uses build_corrected_loss on the live tape instead.
inline double forward_corrected_loss(const Tensor& yhat, const std::vector<uint8_t>& labels,
                                     const std::vector<double>& gamma, const ClassWeights& w) {
    if (yhat.rows() != labels.size() || yhat.rows() != gamma.size())
        throw DimensionError("forward_corrected_loss: row counts disagree");
    Tape tape;
    Var y = tape.input(yhat);
    std::vector<uint32_t> all(yhat.rows());
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<uint32_t>(i);
    Var loss = build_corrected_loss(tape, y, labels, all, gamma, w);
    return tape.value(loss).scalar_value();
}

inline void write_sieve_csv(const std::string& path, const std::vector<SievedSample>& samples) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "node_id,noisy_label,bayes_label,kept\n";
    for (const SievedSample& s : samples)
        f << s.node << ',' << int(s.noisy) << ',' << int(s.bayes) << ',' << (s.kept ? 1 : 0)
          << '\n';
}

inline void write_gamma_csv(const std::string& path, const std::vector<uint32_t>& nodes,
                            const std::vector<double>& gamma) {
    if (nodes.size() != gamma.size()) throw DimensionError("write_gamma_csv: size mismatch");
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "node_id,gamma_hat\n";
    for (size_t i = 0; i < nodes.size(); ++i)
        f << nodes[i] << ',' << detail::fmt_double(gamma[i]) << '\n';
}

}  // namespace kegraph
