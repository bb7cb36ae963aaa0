#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kegraph/optim.hpp"
#include "kegraph/sparse.hpp"
#include "kegraph/tape.hpp"

namespace kegraph {

enum class OutputHead : uint8_t {
    Softmax,          // normalized pair; the default scoring head
    SigmoidPerLogit   // per-logit alternative, selectable by config
};

struct ModelConfig {
    size_t layers = 2;     // L, convolution layers per stack
    size_t hidden = 1000;  // d_1..d_L
    bool use_ke = true;
    bool use_att = true;
    bool use_attention = true;  // hierarchical attention fusion vs plain sum
    OutputHead head = OutputHead::Softmax;

    void validate() const {
        if (layers < 1) throw ContractError("ModelConfig: at least one convolution layer required");
        if (hidden == 0) throw ConfigError("ModelConfig: hidden width must be positive");
        if (!use_ke && !use_att)
            throw ConfigError("ModelConfig: both input branches disabled");
    }
};

// Attention weights observed during one forward pass.
struct FusionTrace {
    std::vector<double> rel_weights_ke;   // per meta-path, ke branch
    std::vector<double> rel_weights_att;  // per meta-path, att branch
    std::vector<double> branch_weights;   // (ke, att) blend
};

// One multi-path weighted convolution: a_v = sum_u What(v,u) h_u, then
// h'_v = act(W_l (a_v + h_v)). What must be row-normalized.
inline Var mwgcn_layer(Tape& tape, const SparseRowMatrix& w_norm, Var h, Var weight,
                       bool relu_act = true) {
    if (!w_norm.rows_substochastic())
        throw ContractError("mwgcn_layer: weight matrix is not row-normalized");
    Var agg = tape.sparse_agg(&w_norm, h);
    Var comb = tape.add(agg, h);
    Var out = tape.matmul(comb, weight);
    return relu_act ? tape.relu(out) : out;
}

// Readout + softmax attention over a set of equally shaped representations.
// Returns the blended representation and the 1 x K weight row.
inline std::pair<Var, Var> attention_pool(Tape& tape, const std::vector<Var>& reps, Var w, Var b) {
    if (reps.empty()) throw ContractError("attention_pool: empty representation list");
    Var scores;
    for (size_t k = 0; k < reps.size(); ++k) {
        Var m = tape.mean_rows(reps[k]);
        Var s = tape.tanh_act(tape.add(tape.matmul(m, w), b));
        scores = k == 0 ? s : tape.concat_cols(scores, s);
    }
    Var weights = tape.softmax_rows(scores);
    Var z;
    for (size_t k = 0; k < reps.size(); ++k) {
        Var contrib = tape.scale_by(reps[k], tape.select_col(weights, k));
        z = k == 0 ? contrib : tape.add(z, contrib);
    }
    return {z, weights};
}

inline std::pair<Var, Var> relation_attention(Tape& tape, const std::vector<Var>& graph_reps,
                                              Var w_rel, Var b_rel) {
    return attention_pool(tape, graph_reps, w_rel, b_rel);
}

inline std::pair<Var, Var> embedding_attention(Tape& tape, Var z_ke, Var z_att, Var w_emb,
                                               Var b_emb) {
    if (!tape.value(z_ke).same_shape(tape.value(z_att)))
        throw DimensionError("embedding_attention: branch shapes disagree");
    return attention_pool(tape, {z_ke, z_att}, w_emb, b_emb);
}

// yhat_v = head(W_pred z_v + b_pred); columns ordered (non-fraud, fraud).
inline Var classify(Tape& tape, Var z, Var w_pred, Var b_pred, OutputHead head) {
    Var logits = tape.add_row_bias(tape.matmul(z, w_pred), b_pred);
    return head == OutputHead::SigmoidPerLogit ? tape.sigmoid(logits) : tape.softmax_rows(logits);
}

// The base network: per (branch, meta-path) MW-GCN stacks, relation and
// embedding attention sublayers, and the two-logit classifier.
class KeModel {
  public:
    KeModel(ModelConfig cfg, size_t n_paths, size_t d_att, size_t d_ke, uint64_t seed)
        : cfg_(cfg), n_paths_(n_paths), d_att_(d_att), d_ke_(d_ke), seed_(seed) {
        cfg_.validate();
        if (n_paths_ == 0) throw ConfigError("KeModel: at least one meta-path required");
        Rng rng(derive_seed(seed, "model-init"));
        auto add_glorot = [&](const std::string& name, size_t rows, size_t cols) {
            Tensor t(rows, cols);
            const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
            for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
            params_.add(name, std::move(t));
        };
        for (const char* branch : {"ke", "att"}) {
            const bool enabled = std::string(branch) == "ke" ? cfg_.use_ke : cfg_.use_att;
            if (!enabled) continue;
            const size_t d_in = std::string(branch) == "ke" ? d_ke_ : d_att_;
            for (size_t k = 0; k < n_paths_; ++k)
                for (size_t l = 0; l < cfg_.layers; ++l)
                    add_glorot(stack_param(branch, k, l), l == 0 ? d_in : cfg_.hidden, cfg_.hidden);
            if (cfg_.use_attention) {
                add_glorot(std::string(branch) + ".rel.W", cfg_.hidden, 1);
                params_.add(std::string(branch) + ".rel.b", Tensor(1, 1));
            }
        }
        if (cfg_.use_attention && cfg_.use_ke && cfg_.use_att) {
            add_glorot("emb.W", cfg_.hidden, 1);
            params_.add("emb.b", Tensor(1, 1));
        }
        // The two output logits are independent sigmoids; starting them as an
        // opposed pair keeps argmax decisions meaningful from the first epoch.
        {
            Tensor w(cfg_.hidden, 2);
            const double limit = std::sqrt(6.0 / static_cast<double>(cfg_.hidden + 2));
            for (size_t i = 0; i < cfg_.hidden; ++i) {
                w.at(i, 0) = rng.uniform(-limit, limit);
                w.at(i, 1) = -w.at(i, 0);
            }
            params_.add("pred.W", std::move(w));
            params_.add("pred.b", Tensor(1, 2));
        }
    }

    const ModelConfig& config() const { return cfg_; }
    size_t n_paths() const { return n_paths_; }
    size_t d_att() const { return d_att_; }
    size_t d_ke() const { return d_ke_; }
    uint64_t seed() const { return seed_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Places every parameter on the tape; order matches ParamStore order.
    std::vector<Var> param_vars(Tape& tape) const {
        std::vector<Var> vars;
        vars.reserve(params_.count());
        for (size_t i = 0; i < params_.count(); ++i)
            vars.push_back(tape.input(params_.value(i), true));
        return vars;
    }

    struct ForwardResult {
        Var yhat;  // N x 2
        Var fused;
        FusionTrace trace;
    };

    // subgraphs: one row-normalized weight matrix per meta-path. x_att / x_ke
    // may be invalid Vars when the corresponding branch is disabled.
    ForwardResult forward(Tape& tape, const std::vector<Var>& vars,
                          const std::vector<const SparseRowMatrix*>& subgraphs, Var x_att,
                          Var x_ke) const {
        if (subgraphs.size() != n_paths_)
            throw DimensionError("KeModel::forward: expected " + std::to_string(n_paths_) +
                                 " subgraphs");
        ForwardResult res;
        auto var_of = [&](const std::string& name) {
            return vars[const_cast<ParamStore&>(params_).index_of(name)];
        };

        auto run_branch = [&](const char* branch, Var x) {
            std::vector<Var> outs;
            outs.reserve(n_paths_);
            for (size_t k = 0; k < n_paths_; ++k) {
                Var h = x;
                for (size_t l = 0; l < cfg_.layers; ++l)
                    h = mwgcn_layer(tape, *subgraphs[k], h, var_of(stack_param(branch, k, l)));
                outs.push_back(h);
            }
            std::vector<double>& tw = std::string(branch) == "ke" ? res.trace.rel_weights_ke
                                                                  : res.trace.rel_weights_att;
            if (!cfg_.use_attention) {
                Var z = outs[0];
                for (size_t k = 1; k < outs.size(); ++k) z = tape.add(z, outs[k]);
                return z;
            }
            auto [z, w] = relation_attention(tape, outs, var_of(std::string(branch) + ".rel.W"),
                                             var_of(std::string(branch) + ".rel.b"));
            const Tensor& wt = tape.value(w);
            tw.assign(wt.data(), wt.data() + wt.size());
            return z;
        };

        Var z_ke, z_att;
        if (cfg_.use_ke) {
            if (!x_ke.valid()) throw ContractError("KeModel::forward: ke branch needs X^ke");
            z_ke = run_branch("ke", x_ke);
        }
        if (cfg_.use_att) {
            if (!x_att.valid()) throw ContractError("KeModel::forward: att branch needs X^att");
            z_att = run_branch("att", x_att);
        }

        Var fused;
        if (cfg_.use_ke && cfg_.use_att) {
            if (cfg_.use_attention) {
                auto [z, w] = embedding_attention(tape, z_ke, z_att, var_of("emb.W"),
                                                  var_of("emb.b"));
                fused = z;
                const Tensor& wt = tape.value(w);
                res.trace.branch_weights.assign(wt.data(), wt.data() + wt.size());
            } else {
                fused = tape.add(z_ke, z_att);
            }
        } else {
            fused = cfg_.use_ke ? z_ke : z_att;
            res.trace.branch_weights = {1.0};
        }

        res.fused = fused;
        res.yhat = classify(tape, fused, var_of("pred.W"), var_of("pred.b"), cfg_.head);
        return res;
    }

    // Gradient-free forward; returns predictions and the trace.
    std::pair<Tensor, FusionTrace> predict(const std::vector<const SparseRowMatrix*>& subgraphs,
                                           const Tensor& x_att, const Tensor& x_ke) const {
        Tape tape;
        Var va = cfg_.use_att ? tape.input(x_att) : Var{};
        Var vk = cfg_.use_ke ? tape.input(x_ke) : Var{};
        std::vector<Var> vars;
        vars.reserve(params_.count());
        for (size_t i = 0; i < params_.count(); ++i) vars.push_back(tape.input(params_.value(i)));
        ForwardResult r = forward(tape, vars, subgraphs, va, vk);
        return {tape.value(r.yhat), r.trace};
    }

    void save_checkpoint(const std::string& bin_path, const std::string& json_path,
                         const nlohmann::ordered_json& extra = {}) const {
        std::ofstream f(bin_path, std::ios::binary);
        if (!f) throw IoError("cannot write " + bin_path);
        const char magic[4] = {'K', 'G', 'C', 'K'};
        const uint32_t version = 1;
        const uint32_t count = static_cast<uint32_t>(params_.count());
        f.write(magic, 4);
        f.write(reinterpret_cast<const char*>(&version), 4);
        f.write(reinterpret_cast<const char*>(&count), 4);
        for (size_t i = 0; i < params_.count(); ++i) {
            const std::string& name = params_.name(i);
            const Tensor& t = params_.value(i);
            const uint16_t len = static_cast<uint16_t>(name.size());
            const uint64_t rows = t.rows(), cols = t.cols();
            f.write(reinterpret_cast<const char*>(&len), 2);
            f.write(name.data(), len);
            f.write(reinterpret_cast<const char*>(&rows), 8);
            f.write(reinterpret_cast<const char*>(&cols), 8);
            f.write(reinterpret_cast<const char*>(t.data()),
                    static_cast<std::streamsize>(sizeof(double) * t.size()));
        }
        if (!f) throw IoError("failed writing " + bin_path);

        nlohmann::ordered_json j;
        j["schema_version"] = 1;
        j["layers"] = cfg_.layers;
        j["hidden"] = cfg_.hidden;
        j["use_ke"] = cfg_.use_ke;
        j["use_att"] = cfg_.use_att;
        j["use_attention"] = cfg_.use_attention;
        j["head"] = cfg_.head == OutputHead::SigmoidPerLogit ? "sigmoid" : "softmax";
        j["n_paths"] = n_paths_;
        j["d_att"] = d_att_;
        j["d_ke"] = d_ke_;
        j["seed"] = seed_;
        for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
        std::ofstream jf(json_path);
        if (!jf) throw IoError("cannot write " + json_path);
        jf << j.dump(2) << '\n';
    }

    static KeModel load_checkpoint(const std::string& bin_path, const std::string& json_path,
                                   nlohmann::ordered_json* sidecar_out = nullptr) {
        std::ifstream jf(json_path);
        if (!jf) throw IoError("cannot open " + json_path);
        nlohmann::ordered_json j;
        try {
            jf >> j;
        } catch (const std::exception& e) {
            throw ParseError(json_path + ": " + e.what());
        }
        ModelConfig cfg;
        cfg.layers = j.at("layers").get<size_t>();
        cfg.hidden = j.at("hidden").get<size_t>();
        cfg.use_ke = j.at("use_ke").get<bool>();
        cfg.use_att = j.at("use_att").get<bool>();
        cfg.use_attention = j.at("use_attention").get<bool>();
        cfg.head = j.at("head").get<std::string>() == "softmax" ? OutputHead::Softmax
                                                                : OutputHead::SigmoidPerLogit;
        KeModel model(cfg, j.at("n_paths").get<size_t>(), j.at("d_att").get<size_t>(),
                      j.at("d_ke").get<size_t>(), j.at("seed").get<uint64_t>());

        std::ifstream f(bin_path, std::ios::binary);
        if (!f) throw IoError("cannot open " + bin_path);
        char magic[4];
        uint32_t version = 0, count = 0;
        f.read(magic, 4);
        f.read(reinterpret_cast<char*>(&version), 4);
        f.read(reinterpret_cast<char*>(&count), 4);
        if (!f || std::string(magic, 4) != "KGCK" || version != 1)
            throw ParseError(bin_path + ": not a KGCK v1 checkpoint");
        for (uint32_t i = 0; i < count; ++i) {
            uint16_t len = 0;
            f.read(reinterpret_cast<char*>(&len), 2);
            std::string name(len, '\0');
            f.read(name.data(), len);
            uint64_t rows = 0, cols = 0;
            f.read(reinterpret_cast<char*>(&rows), 8);
            f.read(reinterpret_cast<char*>(&cols), 8);
            Tensor t(rows, cols);
            f.read(reinterpret_cast<char*>(t.data()),
                   static_cast<std::streamsize>(sizeof(double) * t.size()));
            if (!f) throw ParseError(bin_path + ": truncated checkpoint");
            Tensor& dst = model.params_.value(name);
            if (!dst.same_shape(t))
                throw DimensionError(bin_path + ": shape mismatch for parameter " + name);
            dst = std::move(t);
        }
        if (sidecar_out) *sidecar_out = j;
        return model;
    }

  private:
    static std::string stack_param(const char* branch, size_t path, size_t layer) {
        return std::string(branch) + ".p" + std::to_string(path) + ".W" + std::to_string(layer);
    }

    ModelConfig cfg_;
    size_t n_paths_, d_att_, d_ke_;
    uint64_t seed_;
    ParamStore params_;
};

}  // namespace kegraph
