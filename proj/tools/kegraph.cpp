// Command-line surface: synthetic data generation, schema validation, TransE
// pretraining, subgraph export, training, checkpoint evaluation and report
// aggregation. Exit codes: 0 success, 1 usage/config error, 2 data error,
// 3 numeric or training error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kegraph/config.hpp"

namespace fs = std::filesystem;
using namespace kegraph;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_out = true) {
    cmd->add_option("--config", opts.config_path, "flat key = value config file");
    cmd->add_option("--set", opts.overrides, "override a config key, e.g. --set train.lr=0.01");
    if (with_out) cmd->add_option("--out", opts.out, "output directory");
}

FlatConfig build_config(const CommonOpts& opts) {
    FlatConfig cfg;
    if (!opts.config_path.empty()) cfg.load_file(opts.config_path);
    for (const std::string& kv : opts.overrides) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

fs::path resolve_out_dir(const CommonOpts& opts, const FlatConfig& cfg) {
    fs::path name = opts.out.empty() ? fs::path(cfg.get("output.dir")) : fs::path(opts.out);
    if (name.is_absolute()) return name;
    const char* root = std::getenv("KEGRAPH_RESULTS_DIR");
    return root ? fs::path(root) / name : name;
}

void echo_config(const FlatConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream f(dir / "config.txt");
    if (!f) throw IoError("cannot write " + (dir / "config.txt").string());
    f << cfg.echo();
}

void write_subgraph_tsv(const fs::path& path, const CompanySubgraph& g) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << "# nodes=" << g.node_count << " provenance=" << g.provenance << '\n';
    f << "row\tcol\tcount\tweight\n";
    const SparseRowMatrix& c = g.weights.counts;
    const SparseRowMatrix& w = g.weights.normalized;
    for (size_t r = 0; r < c.rows(); ++r)
        for (size_t k = c.row_begin(r); k < c.row_end(r); ++k)
            f << r << '\t' << c.entry_col(k) << '\t' << detail::fmt_double(c.entry_val(k)) << '\t'
              << detail::fmt_double(w.entry_val(k)) << '\n';
}

std::vector<CompanySubgraph> build_subgraphs(const Fkg& fkg, const FlatConfig& cfg) {
    std::vector<CompanySubgraph> out;
    for (const std::string& name : cfg.get_list("model.metapaths", ';')) {
        const size_t eq = name.find('=');
        out.push_back(build_company_subgraph(
            fkg, eq == std::string::npos
                     ? MetaPathSpec::by_name(name)
                     : MetaPathSpec::parse(name.substr(0, eq), name.substr(eq + 1))));
    }
    return out;
}

int cmd_synth(const CommonOpts& opts) {
    FlatConfig cfg = build_config(opts);
    const fs::path dir = resolve_out_dir(opts, cfg);
    echo_config(cfg, dir);
    const SynthConfig sc = to_synth_config(cfg);
    SynthData data = generate_fkg(sc);
    const CompanySubgraph sum = sum_up_graph(build_subgraphs(data.fkg, cfg));
    inject_hidden_fraud(data, sum, sc);
    save_fkg(data.fkg, (dir / "triples.tsv").string(), (dir / "attrs.csv").string(),
             (dir / "labels.csv").string());
    write_ground_truth_csv((dir / "ground_truth.csv").string(), data.fkg, data.truth);
    size_t frauds = 0, hidden = 0, high_regime = 0;
    for (size_t i = 0; i < data.truth.size(); ++i) {
        const GroundTruthRow& r = data.truth[i];
        frauds += r.clean;
        hidden += r.clean && !r.noisy;
        high_regime += r.clean && r.flip_prob >= 0.5 * (sc.noise.base + sc.noise.high);
    }
    std::cout << "dataset written to " << dir.string() << "\n"
              << "company nodes: " << data.fkg.n_companies() << ", entities: "
              << data.fkg.n_entities() << ", triples: " << data.fkg.n_triples() << "\n"
              << "frauds: " << frauds << " (" << hidden << " hidden, " << high_regime
              << " in the high-flip regime)\n";
    return 0;
}

int cmd_validate(const CommonOpts& opts) {
    FlatConfig cfg = build_config(opts);
    const DataPaths p = resolve_data_paths(cfg);
    const Fkg fkg = load_fkg(p.triples, p.attrs, p.labels);
    const ValidationReport report = validate_schema(fkg);
    std::cout << report.to_string();
    if (!report.empty()) throw SchemaError("validation found violations");
    return 0;
}

int cmd_kge_train(const CommonOpts& opts) {
    FlatConfig cfg = build_config(opts);
    const fs::path dir = resolve_out_dir(opts, cfg);
    echo_config(cfg, dir);
    const DataPaths p = resolve_data_paths(cfg);
    const Fkg fkg = load_fkg(p.triples, p.attrs, p.labels);
    ExperimentConfig ec = to_experiment_config(cfg);
    ec.kge.seed = ec.seeds.front();
    const EmbeddingTable table = train_kge(fkg, ec.kge);
    save_embeddings(table, fkg, (dir / "embeddings.bin").string(),
                    (dir / "embeddings.index.tsv").string());
    std::cout << "embeddings written to " << (dir / "embeddings.bin").string() << " ("
              << table.entities.rows() << " entities, dim " << table.dim() << ")\n";
    return 0;
}

int cmd_subgraphs(const CommonOpts& opts) {
    FlatConfig cfg = build_config(opts);
    const fs::path dir = resolve_out_dir(opts, cfg);
    echo_config(cfg, dir);
    const DataPaths p = resolve_data_paths(cfg);
    const Fkg fkg = load_fkg(p.triples, p.attrs, p.labels);
    std::vector<CompanySubgraph> subgraphs = build_subgraphs(fkg, cfg);
    for (const CompanySubgraph& g : subgraphs)
        write_subgraph_tsv(dir / ("subgraph_" + g.provenance + ".tsv"), g);
    const CompanySubgraph sum = sum_up_graph(subgraphs);
    write_subgraph_tsv(dir / "subgraph_sum_up.tsv", sum);
    std::cout << "wrote " << subgraphs.size() + 1 << " weight matrices to " << dir.string()
              << "\n";
    return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& mode_flag) {
    FlatConfig cfg = build_config(opts);
    if (!mode_flag.empty()) cfg.set("train.mode", mode_flag);
    const fs::path dir = resolve_out_dir(opts, cfg);
    echo_config(cfg, dir);
    const ExperimentConfig ec = to_experiment_config(cfg);
    const MetricsReport report = run_experiment(ec, &std::cerr);

    write_metrics_json((dir / "metrics.json").string(), report, cfg.echo());
    write_curves_csv((dir / "curves.csv").string(), report);
    write_attention_csv((dir / "attention.csv").string(), report, ec.metapaths);
    {
        std::ofstream f(dir / "gamma.csv");
        f << "seed,node_id,gamma_hat\n";
        for (const SeedRun& r : report.runs)
            for (size_t i = 0; i < r.gamma_nodes.size(); ++i)
                f << r.seed << ',' << r.gamma_nodes[i] << ',' << detail::fmt_double(r.gamma[i])
                  << '\n';
    }
    for (const SeedRun& r : report.runs) {
        if (!r.sieve.empty())
            write_sieve_csv((dir / ("sieve_seed" + std::to_string(r.seed) + ".csv")).string(),
                            r.sieve);
        nlohmann::ordered_json extra;
        extra["metapaths"] = ec.metapaths;
        extra["kge_seed"] = derive_seed(r.seed, "kge-run");
        extra["kge"] = {{"dim", ec.kge.dim},       {"lr", ec.kge.lr},
                        {"margin", ec.kge.margin}, {"negatives", ec.kge.negatives},
                        {"batch", ec.kge.batch},   {"steps", ec.kge.max_steps},
                        {"norm", ec.kge.norm == Norm::L1 ? "L1" : "L2"}};
        extra["preprocess"] = {{"mean", r.preprocess.mean},
                               {"lo", r.preprocess.lo},
                               {"hi", r.preprocess.hi},
                               {"dropped", r.preprocess.dropped}};
        const std::string base = (dir / ("ckpt_seed" + std::to_string(r.seed))).string();
        r.model->save_checkpoint(base + ".bin", base + ".json", extra);
    }
    for (const auto& [name, ms] : report.aggregates)
        std::cout << name << ": mean " << ms.mean << " stderr " << ms.stderr_ << "\n";
    std::cout << "results written to " << dir.string() << "\n";
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint) {
    FlatConfig cfg = build_config(opts);
    const DataPaths p = resolve_data_paths(cfg);
    const Fkg fkg = load_fkg(p.triples, p.attrs, p.labels);

    std::string base = checkpoint;
    if (base.size() > 4 && base.substr(base.size() - 4) == ".bin") base.resize(base.size() - 4);
    nlohmann::ordered_json sidecar;
    const KeModel model = KeModel::load_checkpoint(base + ".bin", base + ".json", &sidecar);

    std::vector<CompanySubgraph> subgraphs;
    for (const std::string& name : sidecar.at("metapaths").get<std::vector<std::string>>()) {
        const size_t eq = name.find('=');
        subgraphs.push_back(build_company_subgraph(
            fkg, eq == std::string::npos
                     ? MetaPathSpec::by_name(name)
                     : MetaPathSpec::parse(name.substr(0, eq), name.substr(eq + 1))));
    }
    std::vector<const SparseRowMatrix*> sub_norm;
    for (const CompanySubgraph& g : subgraphs) sub_norm.push_back(&g.weights.normalized);

    PreprocessStats stats;
    stats.mean = sidecar.at("preprocess").at("mean").get<std::vector<double>>();
    stats.lo = sidecar.at("preprocess").at("lo").get<std::vector<double>>();
    stats.hi = sidecar.at("preprocess").at("hi").get<std::vector<double>>();
    stats.dropped = sidecar.at("preprocess").at("dropped").get<std::vector<uint8_t>>();
    const Tensor x_att = apply_preprocess(fkg.attrs(), stats);

    Tensor x_ke(0, 0);
    if (model.config().use_ke) {
        if (!cfg.empty("data.embeddings")) {
            x_ke = extract_company_embeddings(load_embeddings(cfg.get("data.embeddings")), fkg);
        } else {
            KgeConfig kc;
            const auto& kj = sidecar.at("kge");
            kc.dim = kj.at("dim").get<size_t>();
            kc.lr = kj.at("lr").get<double>();
            kc.margin = kj.at("margin").get<double>();
            kc.negatives = kj.at("negatives").get<size_t>();
            kc.batch = kj.at("batch").get<size_t>();
            kc.max_steps = kj.at("steps").get<size_t>();
            kc.norm = kj.at("norm").get<std::string>() == "L1" ? Norm::L1 : Norm::L2;
            kc.seed = sidecar.at("kge_seed").get<uint64_t>();
            std::cerr << "retraining embeddings from the recorded seed\n";
            x_ke = extract_company_embeddings(train_kge(fkg, kc), fkg);
        }
    }

    const auto [yhat, trace] = model.predict(sub_norm, x_att, x_ke);
    std::vector<double> scores(fkg.n_companies());
    std::vector<uint8_t> labels(fkg.n_companies());
    for (size_t i = 0; i < fkg.n_companies(); ++i) {
        scores[i] = yhat.at(i, 1);
        labels[i] = fkg.labels()[i].noisy_label;
    }
    std::cout << "auc: " << auc(scores, labels) << "\n";
    if (!opts.out.empty()) {
        const fs::path dir = resolve_out_dir(opts, cfg);
        fs::create_directories(dir);
        std::ofstream f(dir / "scores.csv");
        if (!f) throw IoError("cannot write scores.csv");
        f << "node_id,company_key,year,score\n";
        for (size_t i = 0; i < fkg.n_companies(); ++i) {
            const std::string& key = fkg.entity_key(fkg.company_entity(static_cast<uint32_t>(i)));
            f << i << ',' << company_of_key(key) << ',' << fkg.labels()[i].record_year << ','
              << detail::fmt_double(scores[i]) << '\n';
        }
        std::cout << "scores written to " << (dir / "scores.csv").string() << "\n";
    }
    return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_csv) {
    std::ofstream f(out_csv);
    if (!f) throw IoError("cannot write " + out_csv);
    f << "run,mode,metric,mean,stderr,n_seeds\n";
    for (const std::string& in : inputs) {
        fs::path path(in);
        if (fs::is_directory(path)) path /= "metrics.json";
        std::ifstream mf(path);
        if (!mf) throw IoError("cannot open " + path.string());
        nlohmann::ordered_json j;
        try {
            mf >> j;
        } catch (const std::exception& e) {
            throw ParseError(path.string() + ": " + e.what());
        }
        const size_t n_seeds = j.at("seeds").size();
        for (auto it = j.at("aggregate").begin(); it != j.at("aggregate").end(); ++it)
            f << in << ',' << j.at("mode").get<std::string>() << ',' << it.key() << ','
              << detail::fmt_double(it.value().at("mean").get<double>()) << ','
              << detail::fmt_double(it.value().at("stderr").get<double>()) << ',' << n_seeds
              << '\n';
    }
    std::cout << "report written to " << out_csv << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"knowledge-enhanced graph fraud detection toolkit"};
    app.require_subcommand(1);
    app.footer("Config keys:\n" + FlatConfig::help());

    CommonOpts synth_o, validate_o, kge_o, sub_o, train_o, eval_o;
    std::string train_mode, eval_ckpt, report_out = "report.csv";
    std::vector<std::string> report_inputs;

    add_common(app.add_subcommand("synth", "generate a synthetic dataset"), synth_o);
    add_common(app.add_subcommand("validate", "run schema checks on a dataset"), validate_o,
               false);
    add_common(app.add_subcommand("kge-train", "pretrain the embedding table"), kge_o);
    add_common(app.add_subcommand("subgraphs", "emit meta-path weight matrices"), sub_o);
    CLI::App* train_cmd = app.add_subcommand("train", "run the training pipeline");
    add_common(train_cmd, train_o);
    train_cmd->add_option("--mode", train_mode, "full | wo_ke | wo_attr | wo_attn | wo_robust");
    CLI::App* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a dataset");
    add_common(eval_cmd, eval_o);
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint .bin path")->required();
    CLI::App* report_cmd = app.add_subcommand("report", "aggregate metrics.json files");
    report_cmd->add_option("--inputs", report_inputs, "run directories or metrics.json paths")
        ->required();
    report_cmd->add_option("--out", report_out, "output CSV path");

    try {
        app.parse(argc, argv);
        if (app.got_subcommand("synth")) return cmd_synth(synth_o);
        if (app.got_subcommand("validate")) return cmd_validate(validate_o);
        if (app.got_subcommand("kge-train")) return cmd_kge_train(kge_o);
        if (app.got_subcommand("subgraphs")) return cmd_subgraphs(sub_o);
        if (app.got_subcommand("train")) return cmd_train(train_o, train_mode);
        if (app.got_subcommand("eval")) return cmd_eval(eval_o, eval_ckpt);
        if (app.got_subcommand("report")) return cmd_report(report_inputs, report_out);
        return 1;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const TrainingError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const SamplingError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
