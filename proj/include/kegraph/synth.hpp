#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "kegraph/common.hpp"
#include "kegraph/graph_store.hpp"
#include "kegraph/metapath.hpp"

namespace kegraph {

// Declared-year gap model: point mass at gap 0 plus a geometric tail, the two
// parameters pinned by the share of same-year detections and the share still
// undetected after 8 years.
struct GapSpec {
    double zero_share = 0.30;
    double over8_share = 0.022;

    double tail_p() const {
        if (zero_share <= 0.0 || zero_share >= 1.0 || over8_share <= 0.0 ||
            over8_share >= 1.0 - zero_share)
            throw ConfigError("GapSpec: shares must satisfy 0 < zero < 1, 0 < over8 < 1-zero");
        return 1.0 - std::pow(over8_share / (1.0 - zero_share), 1.0 / 8.0);
    }
};

inline int32_t sample_gap_years(const GapSpec& gap, Rng& rng) {
    if (rng.uniform() < gap.zero_share) return 0;
    const double p = gap.tail_p();
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    return 1 + static_cast<int32_t>(std::floor(std::log(u) / std::log(1.0 - p)));
}

// Flip probability of a fraud node: two regimes keyed on the fraud-neighbor
// count, plus an optional additive attribute term.
struct NoiseSpec {
    double base = 0.10;
    double high = 0.60;
    int neighbor_threshold = 2;
    double attr_coef = 0.35;
    size_t attr_index = 8;
};

enum class SignalMode {
    Attributes,  // fraud signal lives in company attributes (plus clustering)
    SupportOnly  // fraud signal lives only in support-node attribute values
};

struct SynthConfig {
    size_t n_companies = 500;  // distinct companies
    size_t years_active = 4;   // consecutive report years each
    int32_t year_min = 2003;
    int32_t year_max = 2020;
    double support_ratio = 18.0;  // (DSE seats + RPT records) per company node
    double dse_share = 0.85;      // DSE fraction of the support budget
    size_t d_att = 24;
    double fraud_base_rate = 0.125;

    SignalMode signal_mode = SignalMode::Attributes;
    size_t signal_dims = 6;
    double attr_shift = 2.0;        // mixture shift on signal coordinates
    double attr_coef = 1.5;         // propensity weight on the attribute score
    double neighbor_coef = 1.2;     // propensity weight on fraud-neighbor fraction
    double community_sigma = 0.7;   // spread of per-community fraud offsets
    double support_risk_coef = 2.5; // SupportOnly: weight of the latent risk

    size_t community_size = 20;
    size_t roster_size = 18;            // private directors per company
    size_t shared_pool_size = 40;       // community pool of shared directors
    double share_rate = 0.05;           // seat drawn from the shared pool
    double cross_community_rate = 0.05;
    double missing_rate = 0.10;          // company attribute cells left empty
    double support_missing_rate = 0.90;  // support attribute triples omitted

    NoiseSpec noise;
    GapSpec gap;
    uint64_t seed = 0;

    void validate() const {
        if (n_companies == 0 || years_active == 0) throw ConfigError("SynthConfig: empty graph");
        if (year_min + static_cast<int32_t>(years_active) - 1 > year_max)
            throw ConfigError("SynthConfig: year span shorter than years_active");
        if (support_ratio < 0.0) throw ConfigError("SynthConfig: support_ratio must be >= 0");
        if (fraud_base_rate <= 0.0 || fraud_base_rate >= 1.0)
            throw ConfigError("SynthConfig: fraud_base_rate must lie in (0,1)");
        if (signal_dims > d_att) throw ConfigError("SynthConfig: signal_dims exceeds d_att");
        if (dse_share < 0.0 || dse_share > 1.0)
            throw ConfigError("SynthConfig: dse_share must lie in [0,1]");
        for (double p : {noise.base, noise.high, missing_rate, support_missing_rate,
                         cross_community_rate})
            if (p < 0.0 || p > 1.0) throw ConfigError("SynthConfig: probability outside [0,1]");
    }
};

struct GroundTruthRow {
    uint8_t clean = 0;
    uint8_t noisy = 0;
    double flip_prob = 0.0;
    std::optional<int32_t> violation_year;
    std::optional<int32_t> declared_year;
};

struct SynthData {
    Fkg fkg;
    std::vector<GroundTruthRow> truth;  // per company row
};

namespace detail {

// Solves mean(sigmoid(raw + b)) = target for b.
inline double calibrate_bias(const std::vector<double>& raw, double target) {
    double lo = -30.0, hi = 30.0;
    auto mean_prob = [&raw](double b) {
        double s = 0.0;
        for (double r : raw) s += 1.0 / (1.0 + std::exp(-(r + b)));
        return s / static_cast<double>(raw.size());
    };
    for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        (mean_prob(mid) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace detail

// Builds the synthetic financial knowledge graph with clean labels. The
// observed labels start equal to the clean ones; inject_hidden_fraud adds the
// asymmetric noise afterwards.
inline SynthData generate_fkg(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng_struct(derive_seed(cfg.seed, "structure"));
    Rng rng_attr(derive_seed(cfg.seed, "attributes"));
    Rng rng_label(derive_seed(cfg.seed, "labels"));

    SynthData data;
    Fkg& fkg = data.fkg;
    const size_t n_nodes = cfg.n_companies * cfg.years_active;
    const size_t n_comm = (cfg.n_companies + cfg.community_size - 1) / cfg.community_size;

    const uint32_t rel_same_company = fkg.add_relation("same_company_as");
    const uint32_t rel_same_person = fkg.add_relation("same_person_as");
    const uint32_t rel_has_dse = fkg.add_relation("has_dse");
    const uint32_t rel_has_rpt = fkg.add_relation("has_rpt");
    const uint32_t rel_dse_edu = fkg.add_relation("dse_education");
    const uint32_t rel_dse_pos = fkg.add_relation("dse_position");
    const uint32_t rel_rpt_type = fkg.add_relation("rpt_type");

    auto pad = [](size_t v, int width) {
        std::string s = std::to_string(v);
        while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
        return s;
    };

    // Companies and report years.
    std::vector<uint32_t> node_entity;        // per node
    std::vector<size_t> node_company;         // per node
    std::vector<int32_t> node_year;           // per node
    std::vector<size_t> node_community;       // per node
    std::vector<std::string> company_name(cfg.n_companies);
    node_entity.reserve(n_nodes);
    for (size_t c = 0; c < cfg.n_companies; ++c) {
        company_name[c] = "C" + pad(c, 4);
        const int32_t span = cfg.year_max - cfg.year_min - static_cast<int32_t>(cfg.years_active) + 2;
        const int32_t start = cfg.year_min + static_cast<int32_t>(rng_struct.below(span));
        const uint32_t meta = fkg.add_entity("cm:" + company_name[c], EntityKind::CompanyMeta);
        for (size_t t = 0; t < cfg.years_active; ++t) {
            const int32_t year = start + static_cast<int32_t>(t);
            const uint32_t ent = fkg.add_entity(
                "cy:" + company_name[c] + "_" + std::to_string(year), EntityKind::CompanyYear);
            fkg.add_triple(ent, rel_same_company, meta);
            node_entity.push_back(ent);
            node_company.push_back(c);
            node_year.push_back(year);
            node_community.push_back(c / cfg.community_size);
        }
    }

    // Latents and company attributes. g is the mixture component; u is the
    // hidden riskiness read out through support attributes in SupportOnly mode.
    std::vector<uint8_t> g(n_nodes, 0);
    std::vector<double> u(n_nodes, 0.0);
    std::vector<double> comm_offset(n_comm);
    for (size_t k = 0; k < n_comm; ++k) comm_offset[k] = rng_attr.normal(0.0, cfg.community_sigma);
    const double base_logit = std::log(cfg.fraud_base_rate / (1.0 - cfg.fraud_base_rate));
    std::vector<double> u_company(cfg.n_companies);
    for (size_t c = 0; c < cfg.n_companies; ++c) u_company[c] = rng_attr.normal();
    for (size_t i = 0; i < n_nodes; ++i) {
        const double pg =
            1.0 / (1.0 + std::exp(-(base_logit + comm_offset[node_community[i]])));
        g[i] = rng_attr.bernoulli(pg) ? 1 : 0;
        u[i] = 0.7 * u_company[node_company[i]] + 0.3 * rng_attr.normal();
    }

    AttrMatrix attrs(n_nodes, cfg.d_att);
    std::vector<double> attr_score(n_nodes, 0.0);
    for (size_t i = 0; i < n_nodes; ++i) {
        for (size_t j = 0; j < cfg.d_att; ++j) {
            double v = rng_attr.normal();
            if (cfg.signal_mode == SignalMode::Attributes && g[i] && j < cfg.signal_dims)
                v += cfg.attr_shift;
            if (!rng_attr.bernoulli(cfg.missing_rate)) attrs.set(i, j, v);
            if (j < cfg.signal_dims) attr_score[i] += v;
        }
        if (cfg.signal_dims > 0) attr_score[i] /= std::sqrt(static_cast<double>(cfg.signal_dims));
    }

    // Support structure. Neighbor pairs are tracked as they are created so
    // the label model can use fraud-neighbor fractions without rebuilding
    // meta-path matrices here.
    std::vector<std::vector<uint32_t>> nbr(n_nodes);
    auto link = [&nbr](size_t a, size_t b) {
        if (a == b) return;
        nbr[a].push_back(static_cast<uint32_t>(b));
        nbr[b].push_back(static_cast<uint32_t>(a));
    };
    for (size_t c = 0; c < cfg.n_companies; ++c)
        for (size_t t1 = 0; t1 < cfg.years_active; ++t1)
            for (size_t t2 = t1 + 1; t2 < cfg.years_active; ++t2)
                link(c * cfg.years_active + t1, c * cfg.years_active + t2);

    const size_t n_support = static_cast<size_t>(
        std::llround(static_cast<double>(n_nodes) * cfg.support_ratio));
    const size_t n_seats = static_cast<size_t>(std::llround(
        static_cast<double>(n_support) * cfg.dse_share));
    const size_t n_rpts = n_support - n_seats;

    // Risky support attribute values follow the same latent that drives the
    // labels, so knowledge embeddings carry a usable (if indirect) view of it.
    auto risky_pick = [&](size_t node, Rng& rng) {
        const double drive = cfg.signal_mode == SignalMode::SupportOnly
                                 ? 2.0 * u[node] - 1.0
                                 : 0.8 * attr_score[node] - 1.0;
        return rng.bernoulli(1.0 / (1.0 + std::exp(-drive)));
    };

    // DSE seats. Most seats come from the company's private roster (board
    // continuity across years); a configurable share draws from a community
    // pool of shared directors, which is what creates cross-company SDSE
    // edges at a controlled density.
    const size_t n_private = cfg.n_companies * cfg.roster_size;
    const size_t n_persons = n_private + n_comm * cfg.shared_pool_size;
    std::vector<std::vector<size_t>> person_nodes(n_persons);  // person -> nodes served
    std::unordered_set<std::string> seat_keys;
    for (size_t s = 0; s < n_seats; ++s) {
        const size_t node = s % n_nodes;
        size_t person = 0;
        std::string key;
        for (int attempt = 0; attempt < 10; ++attempt) {
            if (rng_struct.bernoulli(cfg.share_rate) && cfg.shared_pool_size > 0) {
                const bool cross = rng_struct.bernoulli(cfg.cross_community_rate);
                const size_t comm = cross ? rng_struct.below(n_comm) : node_community[node];
                person = n_private + comm * cfg.shared_pool_size +
                         rng_struct.below(cfg.shared_pool_size);
            } else {
                person = node_company[node] * cfg.roster_size + rng_struct.below(cfg.roster_size);
            }
            key = "dse:P" + pad(person, 5) + "_" + company_name[node_company[node]] + "_" +
                  std::to_string(node_year[node]);
            if (!seat_keys.count(key)) break;
        }
        if (seat_keys.count(key)) continue;  // duplicate accepted as a no-op
        seat_keys.insert(key);
        const uint32_t seat = fkg.add_entity(key, EntityKind::Dse);
        const uint32_t meta = fkg.add_entity("dm:P" + pad(person, 5), EntityKind::DseMeta);
        fkg.add_triple(node_entity[node], rel_has_dse, seat);
        fkg.add_triple(seat, rel_same_person, meta);
        for (size_t other : person_nodes[person]) link(node, other);
        person_nodes[person].push_back(node);
        if (!rng_struct.bernoulli(cfg.support_missing_rate)) {
            const size_t edu = rng_struct.below(5);
            fkg.add_triple(seat, rel_dse_edu,
                           fkg.add_entity("att:edu=" + std::to_string(edu),
                                          EntityKind::AttributeValue));
        }
        if (!rng_struct.bernoulli(cfg.support_missing_rate)) {
            const size_t pos = risky_pick(node, rng_struct) ? 6 + rng_struct.below(2)
                                                            : rng_struct.below(6);
            fkg.add_triple(seat, rel_dse_pos,
                           fkg.add_entity("att:pos=" + std::to_string(pos),
                                          EntityKind::AttributeValue));
        }
    }

    // RPT records between same-year companies, mostly intra-community.
    std::vector<std::vector<std::vector<uint32_t>>> active(
        n_comm, std::vector<std::vector<uint32_t>>(cfg.year_max - cfg.year_min + 1));
    std::vector<std::vector<uint32_t>> active_global(cfg.year_max - cfg.year_min + 1);
    for (size_t i = 0; i < n_nodes; ++i) {
        const size_t y = node_year[i] - cfg.year_min;
        active[node_community[i]][y].push_back(static_cast<uint32_t>(i));
        active_global[y].push_back(static_cast<uint32_t>(i));
    }
    for (size_t r = 0; r < n_rpts; ++r) {
        const size_t a = rng_struct.below(n_nodes);
        const size_t y = node_year[a] - cfg.year_min;
        size_t b = a;
        const auto& local = active[node_community[a]][y];
        const auto& global = active_global[y];
        const bool prefer_local = !rng_struct.bernoulli(cfg.cross_community_rate);
        for (int attempt = 0; attempt < 20 && b == a; ++attempt) {
            const auto& pool = (prefer_local && local.size() > 1) ? local : global;
            if (pool.size() < 2) break;
            b = pool[rng_struct.below(pool.size())];
        }
        if (b == a) continue;
        const uint32_t rpt = fkg.add_entity("rpt:T" + pad(r, 6), EntityKind::Rpt);
        fkg.add_triple(node_entity[a], rel_has_rpt, rpt);
        fkg.add_triple(node_entity[b], rel_has_rpt, rpt);
        link(a, b);
        if (!rng_struct.bernoulli(cfg.support_missing_rate)) {
            const size_t ty = risky_pick(a, rng_struct) ? 8 + rng_struct.below(2)
                                                        : rng_struct.below(8);
            fkg.add_triple(rpt, rel_rpt_type,
                           fkg.add_entity("att:type=" + std::to_string(ty),
                                          EntityKind::AttributeValue));
        }
    }
    for (auto& v : nbr) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    }

    // Clean labels: logistic in the attribute (or latent-risk) score plus the
    // fraud fraction of the neighborhood, refreshed over a few sweeps so the
    // neighbor term sees settled labels.
    std::vector<double> raw(n_nodes);
    for (size_t i = 0; i < n_nodes; ++i)
        raw[i] = cfg.signal_mode == SignalMode::Attributes
                     ? cfg.attr_coef * attr_score[i] + 0.5 * comm_offset[node_community[i]]
                     : cfg.support_risk_coef * u[i];
    std::vector<uint8_t> y(n_nodes, 0);
    std::vector<double> logit = raw;
    for (int sweep = 0; sweep < 3; ++sweep) {
        if (sweep > 0) {
            for (size_t i = 0; i < n_nodes; ++i) {
                double frac = 0.0;
                if (!nbr[i].empty()) {
                    size_t cnt = 0;
                    for (uint32_t j : nbr[i]) cnt += y[j];
                    frac = static_cast<double>(cnt) / static_cast<double>(nbr[i].size());
                }
                logit[i] = raw[i] + cfg.neighbor_coef * frac;
            }
        }
        const double b = detail::calibrate_bias(logit, cfg.fraud_base_rate);
        for (size_t i = 0; i < n_nodes; ++i)
            y[i] = rng_label.bernoulli(1.0 / (1.0 + std::exp(-(logit[i] + b)))) ? 1 : 0;
    }
    const double achieved =
        std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n_nodes);
    if (std::abs(achieved - cfg.fraud_base_rate) > 0.2 * cfg.fraud_base_rate)
        throw ConfigError("generate_fkg: achieved fraud ratio " + std::to_string(achieved) +
                          " misses target " + std::to_string(cfg.fraud_base_rate) +
                          " by more than 20%");

    std::vector<LabelRecord> labels(n_nodes);
    data.truth.resize(n_nodes);
    for (size_t i = 0; i < n_nodes; ++i) {
        labels[i].noisy_label = y[i];
        labels[i].record_year = node_year[i];
        if (y[i]) {
            labels[i].violation_year = node_year[i];
            labels[i].declared_year = node_year[i];
        }
        data.truth[i].clean = y[i];
        data.truth[i].noisy = y[i];
        if (y[i]) data.truth[i].violation_year = node_year[i];
    }

    fkg.set_company_data(node_entity, std::move(attrs), std::move(labels));
    fkg.finalize();
    return data;
}

// Turns clean labels into the observed view: fraud nodes flip to non-fraud
// with a probability driven by attributes and the fraud-neighbor count on the
// sum-up graph; surviving frauds get a declared year from the gap model.
// Non-fraud nodes never flip.
inline void inject_hidden_fraud(SynthData& data, const CompanySubgraph& sum_graph,
                                const SynthConfig& cfg) {
    Fkg& fkg = data.fkg;
    const size_t n = fkg.n_companies();
    if (sum_graph.node_count != n)
        throw DimensionError("inject_hidden_fraud: graph node count mismatch");
    Rng rng_flip(derive_seed(cfg.seed, "noise"));
    Rng rng_gap(derive_seed(cfg.seed, "gaps"));

    const SparseRowMatrix& counts = sum_graph.weights.counts;
    for (size_t i = 0; i < n; ++i) {
        int fraud_nbrs = 0;
        for (size_t k = counts.row_begin(i); k < counts.row_end(i); ++k)
            fraud_nbrs += data.truth[counts.entry_col(k)].clean != 0;
        double p = fraud_nbrs >= cfg.noise.neighbor_threshold ? cfg.noise.high : cfg.noise.base;
        if (cfg.noise.attr_coef != 0.0 && cfg.noise.attr_index < fkg.attrs().cols)
            p += cfg.noise.attr_coef * fkg.attrs().value(i, cfg.noise.attr_index);
        p = std::min(1.0, std::max(0.0, p));
        data.truth[i].flip_prob = p;

        LabelRecord& rec = fkg.mutable_labels()[i];
        GroundTruthRow& gt = data.truth[i];
        if (!gt.clean) {
            gt.noisy = 0;
            continue;  // asymmetric: clean non-fraud is never observed as fraud
        }
        if (rng_flip.bernoulli(p)) {
            gt.noisy = 0;
            gt.declared_year = std::nullopt;
            rec.noisy_label = 0;
            rec.violation_year = std::nullopt;
            rec.declared_year = std::nullopt;
        } else {
            gt.noisy = 1;
            const int32_t gap = sample_gap_years(cfg.gap, rng_gap);
            gt.violation_year = rec.record_year;
            gt.declared_year = rec.record_year + gap;
            rec.noisy_label = 1;
            rec.violation_year = rec.record_year;
            rec.declared_year = rec.record_year + gap;
        }
    }
}

inline void write_ground_truth_csv(const std::string& path, const Fkg& fkg,
                                   const std::vector<GroundTruthRow>& truth) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "company_key,year,clean_label,noisy_label,flip_prob,violation_year,declared_year\n";
    for (size_t i = 0; i < truth.size(); ++i) {
        const std::string& key = fkg.entity_key(fkg.company_entity(static_cast<uint32_t>(i)));
        f << company_of_key(key) << ',' << fkg.labels()[i].record_year << ','
          << int(truth[i].clean) << ',' << int(truth[i].noisy) << ','
          << detail::fmt_double(truth[i].flip_prob) << ',';
        if (truth[i].violation_year) f << *truth[i].violation_year;
        f << ',';
        if (truth[i].declared_year) f << *truth[i].declared_year;
        f << '\n';
    }
}

// Ground truth rows keyed like the labels file; row order must match the
// company order of the graph it was written with.
inline std::vector<GroundTruthRow> load_ground_truth_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::vector<GroundTruthRow> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        const auto where = path + ":" + std::to_string(lineno);
        auto fields = detail::split(line, ',');
        if (lineno == 1) {
            if (fields.size() != 7 || fields[2] != "clean_label")
                throw ParseError(where + ": bad ground truth header");
            continue;
        }
        if (fields.size() != 7) throw ParseError(where + ": expected 7 fields");
        GroundTruthRow r;
        r.clean = static_cast<uint8_t>(detail::parse_int(fields[2], where));
        r.noisy = static_cast<uint8_t>(detail::parse_int(fields[3], where));
        r.flip_prob = detail::parse_double(fields[4], where);
        if (!fields[5].empty()) r.violation_year = detail::parse_int(fields[5], where);
        if (!fields[6].empty()) r.declared_year = detail::parse_int(fields[6], where);
        out.push_back(r);
    }
    return out;
}

}  // namespace kegraph
