#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kegraph/harness.hpp"
#include "kegraph/synth.hpp"

namespace kegraph {

// Flat key = value configuration with a closed key registry: unknown keys are
// rejected so misspelled experiment settings cannot pass silently. Values are
// strings; typed getters parse on access. File syntax: one `key = value` per
// line, '#' starts a comment.
class FlatConfig {
  public:
    struct KeyInfo {
        std::string default_value;
        std::string doc;
    };

    static const std::map<std::string, KeyInfo>& registry() {
        static const std::map<std::string, KeyInfo> reg = {
            {"data.dir", {"", "directory with triples.tsv, attrs.csv, labels.csv"}},
            {"data.triples", {"", "triples file (overrides data.dir)"}},
            {"data.attrs", {"", "attributes file (overrides data.dir)"}},
            {"data.labels", {"", "labels file (overrides data.dir)"}},
            {"data.ground_truth", {"", "ground truth CSV for clean-label diagnostics"}},
            {"data.embeddings", {"", "precomputed embedding table (.bin)"}},
            {"output.dir", {"results", "results directory (env KEGRAPH_RESULTS_DIR overrides)"}},

            {"model.layers", {"2", "convolution layers per stack"}},
            {"model.hidden", {"1000", "hidden width of every stack layer"}},
            {"model.head", {"softmax", "output head: softmax | sigmoid"}},
            {"model.metapaths",
             {"RPT;SC;SDSE", "';'-separated: built-in names or name=steps with "
                             "steps like has_rpt>rpt,has_rpt<cy"}},

            {"train.mode", {"full", "full | wo_ke | wo_attr | wo_attn | wo_robust"}},
            {"train.lr", {"0.001", "learning rate"}},
            {"train.optimizer", {"adam", "adam | sgd"}},
            {"train.max_epochs", {"300", "epoch cap"}},
            {"train.patience", {"30", "early-stopping patience on validation AUC"}},
            {"train.seeds", {"0,1,2,3,4", "comma-separated seed list"}},

            {"robust.beta", {"2.0", "sieve confidence regularizer weight"}},
            {"robust.beta_warmup", {"0.1", "fraction of epochs for the beta ramp"}},
            {"robust.ref_weight_temper",
             {"0.65", "reference model class-weight temper exponent (1 = full weights)"}},
            {"robust.ref_lr", {"0", "reference model learning rate (0 = train.lr)"}},
            {"robust.ref_epochs", {"0", "reference model epochs (0 = train.max_epochs)"}},
            {"robust.gamma_override",
             {"", "diagnostic: fixed gamma for stage II (empty = use transition model)"}},
            {"transition.hidden", {"500", "transition model MW-GCN width"}},
            {"transition.lr", {"0.01", "transition model learning rate"}},
            {"transition.optimizer", {"adam", "adam | sgd"}},
            {"transition.epochs", {"300", "transition model epochs"}},
            {"transition.eps", {"1e-6", "gamma clamp epsilon"}},
            {"transition.weight_decay", {"1e-3", "L2 decay on transition weights"}},
            {"transition.nonfraud_prior",
             {"0.3", "weight of the marginal-gamma prior on kept Bayes-non-fraud samples"}},
            {"transition.ensemble", {"5", "independent transition fits averaged"}},
            {"transition.shrink",
             {"1.0", "scale of per-node gamma contrasts around the level (1 = as fitted)"}},
            {"transition.recenter", {"marginal", "gamma level on non-fraud rows: marginal | raw"}},
            {"transition.init_bias", {"-2.0", "initial head bias (low default rate)"}},

            {"kge.dim", {"500", "embedding dimension"}},
            {"kge.lr", {"0.25", "embedding learning rate"}},
            {"kge.margin", {"1.0", "margin of the ranking loss"}},
            {"kge.negatives", {"1", "corrupted triples per positive"}},
            {"kge.batch", {"1024", "positives per step"}},
            {"kge.steps", {"5000", "training steps"}},
            {"kge.norm", {"L1", "distance norm: L1 | L2"}},

            {"synth.n_companies", {"500", "distinct companies"}},
            {"synth.years_active", {"4", "consecutive report years per company"}},
            {"synth.year_min", {"2003", "first possible report year"}},
            {"synth.year_max", {"2020", "last possible report year"}},
            {"synth.support_ratio", {"18", "support nodes per company node"}},
            {"synth.dse_share", {"0.85", "DSE share of the support budget"}},
            {"synth.d_att", {"24", "company attribute dimension"}},
            {"synth.fraud_rate", {"0.125", "target fraud share"}},
            {"synth.signal_mode", {"attributes", "attributes | support_only"}},
            {"synth.signal_dims", {"6", "attribute coordinates carrying signal"}},
            {"synth.attr_shift", {"2.0", "mixture shift on signal coordinates"}},
            {"synth.attr_coef", {"1.5", "propensity weight on attribute score"}},
            {"synth.neighbor_coef", {"1.2", "propensity weight on fraud-neighbor fraction"}},
            {"synth.community_sigma", {"0.7", "per-community fraud offset spread"}},
            {"synth.support_risk_coef", {"2.5", "support_only: latent risk weight"}},
            {"synth.community_size", {"20", "companies per community"}},
            {"synth.roster_size", {"18", "private directors per company"}},
            {"synth.shared_pool_size", {"40", "shared director pool per community"}},
            {"synth.share_rate", {"0.05", "seat share drawn from the shared pool"}},
            {"synth.cross_community_rate", {"0.05", "out-of-community link rate"}},
            {"synth.missing_rate", {"0.1", "missing company attribute cells"}},
            {"synth.support_missing_rate", {"0.9", "omitted support attribute triples"}},
            {"synth.noise.base", {"0.1", "flip probability, few fraud neighbors"}},
            {"synth.noise.high", {"0.6", "flip probability at/above the threshold"}},
            {"synth.noise.threshold", {"2", "fraud-neighbor count threshold"}},
            {"synth.noise.attr_coef", {"0.35", "additive attribute term of the flip probability"}},
            {"synth.noise.attr_index", {"8", "attribute column for the additive term"}},
            {"synth.gap.zero_share", {"0.3", "share of frauds declared the same year"}},
            {"synth.gap.over8_share", {"0.022", "share of frauds undetected after 8 years"}},
            {"synth.seed", {"0", "generator seed"}},
        };
        return reg;
    }

    FlatConfig() {
        for (const auto& [key, info] : registry()) values_[key] = info.default_value;
    }

    void set(const std::string& key, const std::string& value) {
        if (!registry().count(key)) throw ConfigError("unknown config key '" + key + "'");
        values_[key] = value;
    }

    void load_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw IoError("cannot open config file: " + path);
        std::string line;
        size_t lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            const size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto trim = [](std::string s) {
                s.erase(0, s.find_first_not_of(" \t\r"));
                s.erase(s.find_last_not_of(" \t\r") + 1);
                return s;
            };
            line = trim(line);
            if (line.empty()) continue;
            const size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ParseError(path + ":" + std::to_string(lineno) + ": expected key = value");
            try {
                set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
            } catch (const ConfigError& e) {
                throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
    }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
        return it->second;
    }

    bool empty(const std::string& key) const { return get(key).empty(); }

    int64_t get_int(const std::string& key) const {
        return detail::parse_int(get(key), "config key " + key);
    }
    uint64_t get_u64(const std::string& key) const {
        const int64_t v = get_int(key);
        if (v < 0) throw ConfigError("config key " + key + " must be non-negative");
        return static_cast<uint64_t>(v);
    }
    double get_double(const std::string& key) const {
        return detail::parse_double(get(key), "config key " + key);
    }

    std::vector<std::string> get_list(const std::string& key, char sep) const {
        std::vector<std::string> out;
        for (std::string item : detail::split(get(key), sep)) {
            item.erase(0, item.find_first_not_of(" \t"));
            item.erase(item.find_last_not_of(" \t") + 1);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }

    std::vector<uint64_t> get_seed_list(const std::string& key) const {
        std::vector<uint64_t> out;
        for (const std::string& s : get_list(key, ','))
            out.push_back(static_cast<uint64_t>(detail::parse_int(s, "config key " + key)));
        return out;
    }

    // Effective configuration, sorted by key; identical configs echo
    // identical bytes.
    std::string echo() const {
        std::ostringstream os;
        for (const auto& [key, value] : values_) os << key << " = " << value << '\n';
        return os.str();
    }

    static std::string help() {
        std::ostringstream os;
        for (const auto& [key, info] : registry())
            os << "  " << key << " (default: " << (info.default_value.empty() ? "<empty>"
                                                                              : info.default_value)
               << ")\n      " << info.doc << '\n';
        return os.str();
    }

  private:
    std::map<std::string, std::string> values_;
};

inline SynthConfig to_synth_config(const FlatConfig& c) {
    SynthConfig s;
    s.n_companies = c.get_u64("synth.n_companies");
    s.years_active = c.get_u64("synth.years_active");
    s.year_min = static_cast<int32_t>(c.get_int("synth.year_min"));
    s.year_max = static_cast<int32_t>(c.get_int("synth.year_max"));
    s.support_ratio = c.get_double("synth.support_ratio");
    s.dse_share = c.get_double("synth.dse_share");
    s.d_att = c.get_u64("synth.d_att");
    s.fraud_base_rate = c.get_double("synth.fraud_rate");
    const std::string mode = c.get("synth.signal_mode");
    if (mode == "attributes")
        s.signal_mode = SignalMode::Attributes;
    else if (mode == "support_only")
        s.signal_mode = SignalMode::SupportOnly;
    else
        throw ConfigError("synth.signal_mode must be attributes or support_only");
    s.signal_dims = c.get_u64("synth.signal_dims");
    s.attr_shift = c.get_double("synth.attr_shift");
    s.attr_coef = c.get_double("synth.attr_coef");
    s.neighbor_coef = c.get_double("synth.neighbor_coef");
    s.community_sigma = c.get_double("synth.community_sigma");
    s.support_risk_coef = c.get_double("synth.support_risk_coef");
    s.community_size = c.get_u64("synth.community_size");
    s.roster_size = c.get_u64("synth.roster_size");
    s.shared_pool_size = c.get_u64("synth.shared_pool_size");
    s.share_rate = c.get_double("synth.share_rate");
    s.cross_community_rate = c.get_double("synth.cross_community_rate");
    s.missing_rate = c.get_double("synth.missing_rate");
    s.support_missing_rate = c.get_double("synth.support_missing_rate");
    s.noise.base = c.get_double("synth.noise.base");
    s.noise.high = c.get_double("synth.noise.high");
    s.noise.neighbor_threshold = static_cast<int>(c.get_int("synth.noise.threshold"));
    s.noise.attr_coef = c.get_double("synth.noise.attr_coef");
    s.noise.attr_index = c.get_u64("synth.noise.attr_index");
    s.gap.zero_share = c.get_double("synth.gap.zero_share");
    s.gap.over8_share = c.get_double("synth.gap.over8_share");
    s.seed = c.get_u64("synth.seed");
    return s;
}

// Resolves data file paths: explicit keys win over data.dir conventions.
struct DataPaths {
    std::string triples, attrs, labels, ground_truth;
};

inline DataPaths resolve_data_paths(const FlatConfig& c, bool require = true) {
    DataPaths p;
    const std::string dir = c.get("data.dir");
    auto pick = [&](const std::string& key, const std::string& fallback) {
        if (!c.empty(key)) return c.get(key);
        if (!dir.empty()) return dir + "/" + fallback;
        return std::string();
    };
    p.triples = pick("data.triples", "triples.tsv");
    p.attrs = pick("data.attrs", "attrs.csv");
    p.labels = pick("data.labels", "labels.csv");
    p.ground_truth = pick("data.ground_truth", "ground_truth.csv");
    if (!p.ground_truth.empty() && c.empty("data.ground_truth") &&
        !std::filesystem::exists(p.ground_truth))
        p.ground_truth.clear();  // conventional file is optional
    if (require && (p.triples.empty() || p.attrs.empty() || p.labels.empty()))
        throw ConfigError("no dataset: set data.dir or data.triples/attrs/labels");
    return p;
}

inline ExperimentConfig to_experiment_config(const FlatConfig& c) {
    ExperimentConfig e;
    const DataPaths p = resolve_data_paths(c);
    e.triples = p.triples;
    e.attrs = p.attrs;
    e.labels = p.labels;
    e.ground_truth = p.ground_truth;
    e.embeddings = c.get("data.embeddings");
    e.metapaths = c.get_list("model.metapaths", ';');
    e.mode = c.get("train.mode");
    e.layers = c.get_u64("model.layers");
    e.hidden = c.get_u64("model.hidden");
    const std::string head = c.get("model.head");
    if (head == "sigmoid")
        e.head = OutputHead::SigmoidPerLogit;
    else if (head == "softmax")
        e.head = OutputHead::Softmax;
    else
        throw ConfigError("model.head must be sigmoid or softmax");
    e.train.lr = c.get_double("train.lr");
    e.train.optimizer = c.get("train.optimizer");
    e.train.max_epochs = c.get_u64("train.max_epochs");
    e.train.patience = c.get_u64("train.patience");
    e.seeds = c.get_seed_list("train.seeds");
    e.sieve.beta = c.get_double("robust.beta");
    e.sieve.warmup_frac = c.get_double("robust.beta_warmup");
    e.sieve.weight_temper = c.get_double("robust.ref_weight_temper");
    e.sieve.ref_lr = c.get_double("robust.ref_lr");
    e.sieve.ref_epochs = c.get_u64("robust.ref_epochs");
    if (!c.empty("robust.gamma_override")) e.gamma_override = c.get_double("robust.gamma_override");
    e.transition.hidden = c.get_u64("transition.hidden");
    e.transition.lr = c.get_double("transition.lr");
    e.transition.optimizer = c.get("transition.optimizer");
    e.transition.epochs = c.get_u64("transition.epochs");
    e.transition.eps = c.get_double("transition.eps");
    e.transition.weight_decay = c.get_double("transition.weight_decay");
    e.transition.nonfraud_prior = c.get_double("transition.nonfraud_prior");
    e.transition.ensemble = c.get_u64("transition.ensemble");
    e.transition.shrink = c.get_double("transition.shrink");
    {
        const std::string rc = c.get("transition.recenter");
        if (rc != "marginal" && rc != "raw")
            throw ConfigError("transition.recenter must be marginal or raw");
        e.transition.recenter_marginal = rc == "marginal";
    }
    e.transition.init_bias = c.get_double("transition.init_bias");
    e.kge.dim = c.get_u64("kge.dim");
    e.kge.lr = c.get_double("kge.lr");
    e.kge.margin = c.get_double("kge.margin");
    e.kge.negatives = c.get_u64("kge.negatives");
    e.kge.batch = c.get_u64("kge.batch");
    e.kge.max_steps = c.get_u64("kge.steps");
    const std::string norm = c.get("kge.norm");
    if (norm == "L1")
        e.kge.norm = Norm::L1;
    else if (norm == "L2")
        e.kge.norm = Norm::L2;
    else
        throw ConfigError("kge.norm must be L1 or L2");
    e.validate();
    return e;
}

}  // namespace kegraph
