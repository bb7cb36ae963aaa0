#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kegraph/kge.hpp"
#include "kegraph/metapath.hpp"
#include "kegraph/metrics.hpp"
#include "kegraph/robust.hpp"
#include "kegraph/synth.hpp"
#include "kegraph/training.hpp"

namespace kegraph {

// Imputation and min-max statistics, fitted on training rows only.
struct PreprocessStats {
    std::vector<double> mean, lo, hi;
    std::vector<uint8_t> dropped;  // columns with no observed training value
    std::vector<std::string> warnings;

    size_t kept_cols() const {
        size_t n = 0;
        for (uint8_t d : dropped) n += d == 0;
        return n;
    }
};

inline PreprocessStats fit_preprocess(const AttrMatrix& attrs,
                                      const std::vector<uint32_t>& train_rows) {
    PreprocessStats s;
    s.mean.assign(attrs.cols, 0.0);
    s.lo.assign(attrs.cols, 0.0);
    s.hi.assign(attrs.cols, 0.0);
    s.dropped.assign(attrs.cols, 0);
    for (size_t j = 0; j < attrs.cols; ++j) {
        double sum = 0.0, lo = 0.0, hi = 0.0;
        size_t n = 0;
        for (uint32_t r : train_rows) {
            if (!attrs.is_observed(r, j)) continue;
            const double v = attrs.value(r, j);
            if (n == 0) {
                lo = hi = v;
            } else {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            sum += v;
            ++n;
        }
        if (n == 0) {
            s.dropped[j] = 1;
            s.warnings.push_back("column f_" + std::to_string(j) +
                                 " has no observed training value; dropped");
            continue;
        }
        s.mean[j] = sum / static_cast<double>(n);
        s.lo[j] = lo;
        s.hi[j] = hi;
    }
    return s;
}

// Imputes with the training mean, min-max scales with training bounds, clips
// to [0,1]; dropped columns are removed. Constant columns map to 0.
inline Tensor apply_preprocess(const AttrMatrix& attrs, const PreprocessStats& s) {
    if (s.dropped.size() != attrs.cols) throw DimensionError("apply_preprocess: stats mismatch");
    Tensor out(attrs.rows, s.kept_cols());
    for (size_t r = 0; r < attrs.rows; ++r) {
        size_t c = 0;
        for (size_t j = 0; j < attrs.cols; ++j) {
            if (s.dropped[j]) continue;
            const double raw = attrs.is_observed(r, j) ? attrs.value(r, j) : s.mean[j];
            const double range = s.hi[j] - s.lo[j];
            double v = range > 0.0 ? (raw - s.lo[j]) / range : 0.0;
            v = std::min(1.0, std::max(0.0, v));
            out.at(r, c++) = v;
        }
    }
    return out;
}

// Disjoint 6:2:2 node split. The clean-test rule comes first: a non-fraud
// node may enter the test set only when its record year is at least 8 years
// older than the dataset horizon; fraud nodes are unrestricted. The ratio is
// met when the eligible pool allows it, otherwise a shortfall warning is
// recorded.
struct Split {
    std::vector<uint32_t> train, valid, test;
    std::vector<std::string> warnings;
};

inline Split split_dataset(const Fkg& fkg, uint64_t seed) {
    const auto& labels = fkg.labels();
    if (labels.empty()) throw ContractError("split_dataset: no labels loaded");
    int32_t horizon = labels[0].record_year;
    for (const LabelRecord& l : labels) horizon = std::max(horizon, l.record_year);

    std::vector<uint32_t> order(labels.size());
    for (uint32_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, "split"));
    rng.shuffle(order);

    const size_t n = labels.size();
    const size_t n_test = static_cast<size_t>(std::llround(0.2 * static_cast<double>(n)));
    const size_t n_valid = static_cast<size_t>(std::llround(0.2 * static_cast<double>(n)));

    Split split;
    auto test_eligible = [&](uint32_t i) {
        return labels[i].noisy_label == 1 || labels[i].record_year <= horizon - 8;
    };
    std::vector<uint32_t> rest;
    for (uint32_t i : order) {
        if (split.test.size() < n_test && test_eligible(i))
            split.test.push_back(i);
        else
            rest.push_back(i);
    }
    if (split.test.size() < n_test)
        split.warnings.push_back("clean-test rule left only " +
                                 std::to_string(split.test.size()) + " of " +
                                 std::to_string(n_test) + " test slots filled");
    for (uint32_t i : rest) {
        if (split.valid.size() < n_valid)
            split.valid.push_back(i);
        else
            split.train.push_back(i);
    }
    return split;
}

struct ExperimentConfig {
    std::string triples, attrs, labels;
    std::string ground_truth;  // optional: enables clean-label diagnostics
    std::string embeddings;    // optional: precomputed table instead of per-seed training
    std::vector<std::string> metapaths = {"RPT", "SC", "SDSE"};
    std::string mode = "full";  // full | wo_ke | wo_attr | wo_attn | wo_robust
    size_t layers = 2;
    size_t hidden = 1000;
    OutputHead head = OutputHead::SigmoidPerLogit;
    TrainConfig train;
    SieveConfig sieve;
    TransitionConfig transition;
    KgeConfig kge;
    std::optional<double> gamma_override;  // diagnostic: fixed gamma for stage II
    std::vector<uint64_t> seeds = {0, 1, 2, 3, 4};

    ModelConfig model_config() const {
        ModelConfig m;
        m.layers = layers;
        m.hidden = hidden;
        m.head = head;
        m.use_ke = mode != "wo_ke";
        m.use_att = mode != "wo_attr";
        m.use_attention = mode != "wo_attn";
        return m;
    }
    bool robust_enabled() const { return mode != "wo_robust"; }

    void validate() const {
        static const std::vector<std::string> modes = {"full", "wo_ke", "wo_attr", "wo_attn",
                                                       "wo_robust"};
        if (std::find(modes.begin(), modes.end(), mode) == modes.end())
            throw ConfigError("unknown mode '" + mode + "'");
        if (seeds.empty()) throw ConfigError("at least one seed required");
        if (metapaths.empty()) throw ConfigError("at least one meta-path required");
    }
};

struct SeedRun {
    uint64_t seed = 0;
    double valid_auc = 0.0, test_auc = 0.0;  // against observed labels
    std::optional<double> clean_valid_auc, clean_test_auc;
    size_t best_epoch = 0, epochs_run = 0;
    std::vector<CurvePoint> curve;
    FusionTrace trace;
    std::vector<SievedSample> sieve;           // robust mode only
    std::vector<uint32_t> gamma_nodes;         // training nodes, robust mode
    std::vector<double> gamma;                 // estimated hidden fraud rates
    std::shared_ptr<KeModel> model;            // restored best parameters
    PreprocessStats preprocess;
    Split split;
};

struct MetricsReport {
    std::string mode;
    std::vector<SeedRun> runs;
    std::map<std::string, MeanStderr> aggregates;
};

namespace detail {

template <typename F>
auto stage(const std::string& name, uint64_t seed, F&& fn) {
    const auto ctx = [&](const char* what) {
        return "stage '" + name + "' (seed " + std::to_string(seed) + "): " + what;
    };
    try {
        return fn();
    } catch (const TrainingError& e) {
        throw TrainingError(ctx(e.what()));
    } catch (const NumericError& e) {
        throw NumericError(ctx(e.what()));
    } catch (const SamplingError& e) {
        throw SamplingError(ctx(e.what()));
    } catch (const MetricError& e) {
        throw MetricError(ctx(e.what()));
    } catch (const ConfigError& e) {
        throw ConfigError(ctx(e.what()));
    } catch (const Error& e) {
        throw Error(ctx(e.what()));
    }
}

}  // namespace detail

// Runs the configured pipeline once per seed and aggregates mean / standard
// error per metric. Evaluation scores are always the uncorrected fraud
// probabilities (second output column).
inline MetricsReport run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
    cfg.validate();
    MetricsReport report;
    report.mode = cfg.mode;

    Fkg fkg = load_fkg(cfg.triples, cfg.attrs, cfg.labels);
    std::vector<GroundTruthRow> truth;
    if (!cfg.ground_truth.empty()) {
        truth = load_ground_truth_csv(cfg.ground_truth);
        if (truth.size() != fkg.n_companies())
            throw DimensionError("ground truth rows do not match company count");
    }

    std::vector<CompanySubgraph> subgraphs;
    for (const std::string& name : cfg.metapaths) {
        const size_t eq = name.find('=');
        subgraphs.push_back(build_company_subgraph(
            fkg, eq == std::string::npos
                     ? MetaPathSpec::by_name(name)
                     : MetaPathSpec::parse(name.substr(0, eq), name.substr(eq + 1))));
    }
    const CompanySubgraph sum_graph = sum_up_graph(subgraphs);
    std::vector<const SparseRowMatrix*> sub_norm;
    for (const CompanySubgraph& g : subgraphs) sub_norm.push_back(&g.weights.normalized);

    std::optional<EmbeddingTable> fixed_table;
    if (!cfg.embeddings.empty()) fixed_table = load_embeddings(cfg.embeddings);

    const ModelConfig mc = cfg.model_config();
    mc.validate();
    const std::vector<uint8_t> noisy = [&fkg] {
        std::vector<uint8_t> v(fkg.n_companies());
        for (size_t i = 0; i < v.size(); ++i) v[i] = fkg.labels()[i].noisy_label;
        return v;
    }();

    for (uint64_t seed : cfg.seeds) {
        SeedRun run;
        run.seed = seed;
        if (log) *log << "[seed " << seed << "] split + preprocess\n";

        run.split = detail::stage("split", seed, [&] { return split_dataset(fkg, seed); });
        run.preprocess = fit_preprocess(fkg.attrs(), run.split.train);
        const Tensor x_att = apply_preprocess(fkg.attrs(), run.preprocess);

        Tensor x_ke(0, 0);
        if (mc.use_ke) {
            x_ke = detail::stage("kge", seed, [&] {
                if (fixed_table) return extract_company_embeddings(*fixed_table, fkg);
                KgeConfig kc = cfg.kge;
                kc.seed = derive_seed(seed, "kge-run");
                if (log) *log << "[seed " << seed << "] kge pretraining\n";
                return extract_company_embeddings(train_kge(fkg, kc), fkg);
            });
        }

        ModelData data;
        data.subgraphs = sub_norm;
        data.x_att = x_att;
        data.x_ke = x_ke;
        data.noisy_labels = noisy;
        data.train_idx = run.split.train;
        data.valid_idx = run.split.valid;
        data.weights = detail::stage("class-weights", seed,
                                     [&] { return class_weights(noisy, run.split.train); });

        LossSpec final_loss;
        if (cfg.robust_enabled()) {
            if (log) *log << "[seed " << seed << "] stage I: sieve\n";
            SieveResult sieve = detail::stage("sieve", seed, [&] {
                TrainConfig tc = cfg.train;
                return collect_bayes_labels(mc, x_att.cols(), x_ke.cols(), data, cfg.sieve, tc,
                                            seed);
            });
            run.sieve = sieve.samples;
            if (log)
                *log << "[seed " << seed << "] sieve: kept " << sieve.kept_bayes_fraud
                     << " bayes-fraud + " << sieve.kept_bayes_nonfraud
                     << " bayes-non-fraud, dropped " << sieve.dropped << " (reference auc "
                     << sieve.reference_valid_auc << ")\n";
            if (log) *log << "[seed " << seed << "] stage I: transition model\n";
            const Tensor gamma_all = detail::stage("transition", seed, [&] {
                const size_t n_fits = std::max<size_t>(1, cfg.transition.ensemble);
                Tensor avg(fkg.n_companies(), 1);
                for (size_t j = 0; j < n_fits; ++j) {
                    TransitionModel trans = train_transition_model(
                        sieve, sum_graph.weights.normalized, x_att, cfg.transition,
                        derive_seed(seed, "transition-" + std::to_string(j)));
                    const Tensor g = trans.predict(sum_graph.weights.normalized, x_att);
                    for (size_t i = 0; i < avg.size(); ++i) avg[i] += g[i] / double(n_fits);
                }
                // Only gamma on observed-non-fraud rows carries gradient in
                // the corrected loss. The estimator's contrasts are reliable
                // but its level on those rows is not; recenter it on the
                // hidden rate seen among the kept Bayes-fraud samples.
                double center = 0.0;
                size_t n_center = 0;
                for (uint32_t i : run.split.train)
                    if (noisy[i] == 0) {
                        center += avg.at(i, 0);
                        ++n_center;
                    }
                center /= static_cast<double>(n_center);
                double level = center;
                if (cfg.transition.recenter_marginal) {
                    double bar = 0.0;
                    size_t m = 0;
                    for (const SievedSample& s : sieve.samples)
                        if (s.kept && s.bayes == 1) {
                            bar += s.noisy == 0 ? 1.0 : 0.0;
                            ++m;
                        }
                    level = bar / static_cast<double>(m);
                }
                for (size_t i = 0; i < avg.size(); ++i)
                    avg[i] = level + cfg.transition.shrink * (avg[i] - center);
                for (size_t i = 0; i < avg.size(); ++i)
                    avg[i] = std::min(1.0 - cfg.transition.eps,
                                      std::max(cfg.transition.eps, avg[i]));
                return avg;
            });
            final_loss.mode = LossMode::Corrected;
            final_loss.gamma.resize(run.split.train.size());
            run.gamma_nodes = run.split.train;
            run.gamma.resize(run.split.train.size());
            for (size_t i = 0; i < run.split.train.size(); ++i) {
                const double g = cfg.gamma_override ? *cfg.gamma_override
                                                    : gamma_all.at(run.split.train[i], 0);
                final_loss.gamma[i] = g;
                run.gamma[i] = g;
            }
        } else {
            final_loss.mode = LossMode::Plain;
        }

        if (log) *log << "[seed " << seed << "] stage II: training (" << cfg.mode << ")\n";
        run.model = std::make_shared<KeModel>(mc, subgraphs.size(), x_att.cols(), x_ke.cols(),
                                              derive_seed(seed, "final"));
        FitResult fit = detail::stage("train", seed,
                                      [&] { return fit_model(*run.model, data, final_loss,
                                                             cfg.train); });
        run.best_epoch = fit.best_epoch;
        run.epochs_run = fit.epochs_run;
        run.curve = fit.curve;
        run.trace = fit.trace;

        auto auc_on = [&](const std::vector<uint32_t>& idx, bool clean) {
            std::vector<double> scores(idx.size());
            std::vector<uint8_t> lab(idx.size());
            for (size_t i = 0; i < idx.size(); ++i) {
                scores[i] = fit.yhat.at(idx[i], 1);
                lab[i] = clean ? truth[idx[i]].clean : noisy[idx[i]];
            }
            return auc(scores, lab);
        };
        run.valid_auc = detail::stage("eval", seed, [&] { return auc_on(run.split.valid, false); });
        run.test_auc = detail::stage("eval", seed, [&] { return auc_on(run.split.test, false); });
        if (!truth.empty()) {
            run.clean_valid_auc = auc_on(run.split.valid, true);
            run.clean_test_auc = auc_on(run.split.test, true);
        }
        if (log)
            *log << "[seed " << seed << "] test_auc=" << run.test_auc
                 << (run.clean_test_auc ? " clean_test_auc=" + std::to_string(*run.clean_test_auc)
                                        : std::string())
                 << "\n";
        report.runs.push_back(std::move(run));
    }

    auto aggregate = [&report](const std::string& name, auto getter) {
        std::vector<double> xs;
        for (const SeedRun& r : report.runs) {
            auto v = getter(r);
            if (v) xs.push_back(*v);
        }
        if (!xs.empty()) report.aggregates[name] = mean_stderr(xs);
    };
    aggregate("valid_auc", [](const SeedRun& r) { return std::optional<double>(r.valid_auc); });
    aggregate("test_auc", [](const SeedRun& r) { return std::optional<double>(r.test_auc); });
    aggregate("clean_valid_auc", [](const SeedRun& r) { return r.clean_valid_auc; });
    aggregate("clean_test_auc", [](const SeedRun& r) { return r.clean_test_auc; });
    aggregate("best_epoch", [](const SeedRun& r) {
        return std::optional<double>(static_cast<double>(r.best_epoch));
    });
    return report;
}

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// metrics.json: versioned scalar summary of one experiment.
inline void write_metrics_json(const std::string& path, const MetricsReport& report,
                               const std::string& config_echo) {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["mode"] = report.mode;
    char digest[32];
    std::snprintf(digest, sizeof digest, "%016llx",
                  static_cast<unsigned long long>(fnv1a(config_echo)));
    j["config_digest"] = digest;
    j["seeds"] = nlohmann::ordered_json::array();
    for (const SeedRun& r : report.runs) j["seeds"].push_back(r.seed);
    j["per_seed"] = nlohmann::ordered_json::array();
    for (const SeedRun& r : report.runs) {
        nlohmann::ordered_json s;
        s["seed"] = r.seed;
        s["valid_auc"] = r.valid_auc;
        s["test_auc"] = r.test_auc;
        if (r.clean_valid_auc) s["clean_valid_auc"] = *r.clean_valid_auc;
        if (r.clean_test_auc) s["clean_test_auc"] = *r.clean_test_auc;
        s["best_epoch"] = r.best_epoch;
        s["epochs_run"] = r.epochs_run;
        if (!r.sieve.empty()) {
            size_t kept = 0;
            for (const SievedSample& x : r.sieve) kept += x.kept;
            s["sieve_kept"] = kept;
            s["sieve_total"] = r.sieve.size();
        }
        j["per_seed"].push_back(std::move(s));
    }
    j["aggregate"] = nlohmann::ordered_json::object();
    for (const auto& [name, ms] : report.aggregates) {
        j["aggregate"][name] = {{"mean", ms.mean}, {"stderr", ms.stderr_}};
    }
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << j.dump(2) << '\n';
}

inline void write_curves_csv(const std::string& path, const MetricsReport& report) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "seed,epoch,train_loss,valid_auc\n";
    for (const SeedRun& r : report.runs)
        for (const CurvePoint& p : r.curve)
            f << r.seed << ',' << p.epoch << ',' << detail::fmt_double(p.train_loss) << ','
              << detail::fmt_double(p.valid_auc) << '\n';
}

inline void write_attention_csv(const std::string& path, const MetricsReport& report,
                                const std::vector<std::string>& metapaths) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "seed,level,name,weight\n";
    for (const SeedRun& r : report.runs) {
        for (size_t k = 0; k < r.trace.rel_weights_ke.size(); ++k)
            f << r.seed << ",rel_ke," << metapaths[k] << ','
              << detail::fmt_double(r.trace.rel_weights_ke[k]) << '\n';
        for (size_t k = 0; k < r.trace.rel_weights_att.size(); ++k)
            f << r.seed << ",rel_att," << metapaths[k] << ','
              << detail::fmt_double(r.trace.rel_weights_att[k]) << '\n';
        static const char* branch_names[2] = {"ke", "att"};
        for (size_t k = 0; k < r.trace.branch_weights.size(); ++k)
            f << r.seed << ",branch," << (k < 2 ? branch_names[k] : "?") << ','
              << detail::fmt_double(r.trace.branch_weights[k]) << '\n';
    }
}

}  // namespace kegraph
