#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "kegraph/common.hpp"
#include "kegraph/graph_store.hpp"
#include "kegraph/tensor.hpp"

namespace kegraph {

enum class Norm : uint8_t { L1 = 1, L2 = 2 };

struct KgeConfig {
    size_t dim = 500;
    double lr = 0.25;
    double margin = 1.0;
    size_t negatives = 1;     // corrupted triples per positive
    size_t batch = 1024;      // positives per step
    size_t max_steps = 5000;  // sized so desk-scale graphs train in minutes
    Norm norm = Norm::L1;
    uint64_t seed = 0;

    void validate() const {
        if (dim == 0 || lr <= 0.0 || margin <= 0.0 || negatives == 0 || batch == 0)
            throw ConfigError("KgeConfig: dim, lr, margin, negatives and batch must be positive");
    }
};

// Learned TransE vectors. Entity rows are kept inside the unit L2 ball after
// every training step.
struct EmbeddingTable {
    Tensor entities;   // |V| x dim
    Tensor relations;  // |R| x dim
    Norm norm = Norm::L1;

    size_t dim() const { return entities.cols(); }
};

namespace detail {

inline double transe_distance(const EmbeddingTable& t, const Triple& triple,
                              std::vector<double>* diff_out = nullptr) {
    const size_t d = t.dim();
    const double* h = t.entities.row(triple.head);
    const double* r = t.relations.row(triple.relation);
    const double* tl = t.entities.row(triple.tail);
    double dist = 0.0;
    if (diff_out) diff_out->resize(d);
    for (size_t i = 0; i < d; ++i) {
        const double v = h[i] + r[i] - tl[i];
        if (diff_out) (*diff_out)[i] = v;
        dist += t.norm == Norm::L1 ? std::abs(v) : v * v;
    }
    return t.norm == Norm::L1 ? dist : std::sqrt(dist);
}

inline void ball_project(Tensor& m, uint32_t row) {
    double sq = 0.0;
    double* p = m.row(row);
    for (size_t i = 0; i < m.cols(); ++i) sq += p[i] * p[i];
    if (sq <= 1.0) return;
    const double inv = 1.0 / std::sqrt(sq);
    for (size_t i = 0; i < m.cols(); ++i) p[i] *= inv;
}

}  // namespace detail

// f(h, r, t) = -||h + r - t||; higher means more plausible.
inline double transe_score(const EmbeddingTable& table, const Triple& triple) {
    if (triple.head >= table.entities.rows() || triple.tail >= table.entities.rows() ||
        triple.relation >= table.relations.rows())
        throw ReferenceError("transe_score: id out of range");
    return -detail::transe_distance(table, triple);
}

// Margin ranking term for one (positive, negative) pair.
inline double margin_rank_loss(const EmbeddingTable& table, const Triple& pos, const Triple& neg,
                               double margin) {
    const double l = margin - transe_score(table, pos) + transe_score(table, neg);
    return l > 0.0 ? l : 0.0;
}

// Corrupts head or tail (fair coin) with a uniformly drawn entity of the same
// kind. Corruptions that collide with an existing triple are resampled, at
// most 100 times, then accepted.
inline std::vector<Triple> negative_sample(const Triple& triple, const Fkg& fkg, size_t k,
                                           Rng& rng) {
    if (k == 0) throw ContractError("negative_sample: k must be >= 1");
    std::vector<Triple> out;
    out.reserve(k);
    for (size_t i = 0; i < k; ++i) {
        const bool corrupt_head = rng.bernoulli(0.5);
        const uint32_t original = corrupt_head ? triple.head : triple.tail;
        const auto& pool = fkg.entities_of_kind(fkg.entity_kind(original));
        if (pool.size() < 2)
            throw SamplingError("negative_sample: entity kind has a single member, cannot corrupt");
        Triple cand = triple;
        for (int attempt = 0; attempt < 100; ++attempt) {
            const uint32_t repl = pool[rng.below(pool.size())];
            if (corrupt_head)
                cand.head = repl;
            else
                cand.tail = repl;
            if (!fkg.has_triple(cand.head, cand.relation, cand.tail)) break;
        }
        out.push_back(cand);
    }
    return out;
}

// Margin-ranking TransE with per-pair SGD updates. Entity rows touched in a
// step are projected back into the unit ball at the end of the step.
inline EmbeddingTable train_kge(const Fkg& fkg, const KgeConfig& cfg) {
    cfg.validate();
    if (fkg.n_entities() == 0) throw TrainingError("train_kge: graph has no entities");

    EmbeddingTable table;
    table.norm = cfg.norm;
    table.entities = Tensor(fkg.n_entities(), cfg.dim);
    table.relations = Tensor(std::max<size_t>(fkg.n_relations(), 1), cfg.dim);

    Rng rng(derive_seed(cfg.seed, "kge"));
    const double bound = 6.0 / std::sqrt(static_cast<double>(cfg.dim));
    for (size_t i = 0; i < table.entities.rows(); ++i) {
        for (size_t j = 0; j < cfg.dim; ++j) table.entities.at(i, j) = rng.uniform(-bound, bound);
        detail::ball_project(table.entities, static_cast<uint32_t>(i));
    }
    for (size_t i = 0; i < table.relations.rows(); ++i) {
        double sq = 0.0;
        for (size_t j = 0; j < cfg.dim; ++j) {
            table.relations.at(i, j) = rng.uniform(-bound, bound);
            sq += table.relations.at(i, j) * table.relations.at(i, j);
        }
        const double inv = sq > 0.0 ? 1.0 / std::sqrt(sq) : 0.0;
        for (size_t j = 0; j < cfg.dim; ++j) table.relations.at(i, j) *= inv;
    }

    if (fkg.n_triples() == 0 || cfg.max_steps == 0) return table;

    std::vector<double> gpos, gneg;
    std::vector<uint32_t> touched;
    const auto& triples = fkg.triples();

    for (size_t step = 0; step < cfg.max_steps; ++step) {
        touched.clear();
        for (size_t b = 0; b < cfg.batch; ++b) {
            const Triple& pos = triples[rng.below(triples.size())];
            for (const Triple& neg : negative_sample(pos, fkg, cfg.negatives, rng)) {
                const double dp = detail::transe_distance(table, pos, &gpos);
                const double dn = detail::transe_distance(table, neg, &gneg);
                const double loss = cfg.margin + dp - dn;
                if (loss <= 0.0) continue;
                if (!std::isfinite(loss)) throw NumericError("train_kge: non-finite loss");
                // d||v||/dv: sign(v) for L1, v/||v|| for L2.
                for (size_t j = 0; j < cfg.dim; ++j) {
                    if (cfg.norm == Norm::L1) {
                        gpos[j] = gpos[j] > 0.0 ? 1.0 : (gpos[j] < 0.0 ? -1.0 : 0.0);
                        gneg[j] = gneg[j] > 0.0 ? 1.0 : (gneg[j] < 0.0 ? -1.0 : 0.0);
                    } else {
                        gpos[j] = dp > 0.0 ? gpos[j] / dp : 0.0;
                        gneg[j] = dn > 0.0 ? gneg[j] / dn : 0.0;
                    }
                }
                double* eh = table.entities.row(pos.head);
                double* et = table.entities.row(pos.tail);
                double* enh = table.entities.row(neg.head);
                double* ent = table.entities.row(neg.tail);
                double* rp = table.relations.row(pos.relation);
                for (size_t j = 0; j < cfg.dim; ++j) {
                    eh[j] -= cfg.lr * gpos[j];
                    et[j] += cfg.lr * gpos[j];
                    enh[j] += cfg.lr * gneg[j];
                    ent[j] -= cfg.lr * gneg[j];
                    rp[j] -= cfg.lr * (gpos[j] - gneg[j]);
                }
                touched.push_back(pos.head);
                touched.push_back(pos.tail);
                touched.push_back(neg.head);
                touched.push_back(neg.tail);
            }
        }
        std::sort(touched.begin(), touched.end());
        touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
        for (uint32_t row : touched) detail::ball_project(table.entities, row);
    }
    if (!table.entities.all_finite() || !table.relations.all_finite())
        throw NumericError("train_kge: non-finite embedding");
    return table;
}

// Company rows of the entity matrix, in company-index order (matches X^att).
inline Tensor extract_company_embeddings(const EmbeddingTable& table, const Fkg& fkg) {
    Tensor out(fkg.n_companies(), table.dim());
    for (uint32_t row = 0; row < fkg.n_companies(); ++row) {
        const uint32_t ent = fkg.company_entity(row);
        for (size_t j = 0; j < table.dim(); ++j) out.at(row, j) = table.entities.at(ent, j);
    }
    return out;
}

// Binary layout: magic "KGEB", u32 version, u32 dim, u64 entity count,
// u64 relation count, u8 norm, then row-major f64 entity and relation blocks.
inline void save_embeddings(const EmbeddingTable& table, const Fkg& fkg,
                            const std::string& bin_path, const std::string& index_path) {
    std::ofstream f(bin_path, std::ios::binary);
    if (!f) throw IoError("cannot write " + bin_path);
    const char magic[4] = {'K', 'G', 'E', 'B'};
    const uint32_t version = 1;
    const uint32_t dim = static_cast<uint32_t>(table.dim());
    const uint64_t ne = table.entities.rows();
    const uint64_t nr = table.relations.rows();
    const uint8_t norm = static_cast<uint8_t>(table.norm);
    f.write(magic, 4);
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&dim), 4);
    f.write(reinterpret_cast<const char*>(&ne), 8);
    f.write(reinterpret_cast<const char*>(&nr), 8);
    f.write(reinterpret_cast<const char*>(&norm), 1);
    f.write(reinterpret_cast<const char*>(table.entities.data()),
            static_cast<std::streamsize>(sizeof(double) * table.entities.size()));
    f.write(reinterpret_cast<const char*>(table.relations.data()),
            static_cast<std::streamsize>(sizeof(double) * table.relations.size()));
    if (!f) throw IoError("failed writing " + bin_path);

    std::ofstream idx(index_path);
    if (!idx) throw IoError("cannot write " + index_path);
    for (uint32_t i = 0; i < fkg.n_entities(); ++i)
        idx << "E\t" << fkg.entity_key(i) << '\t' << i << '\n';
    for (uint32_t i = 0; i < fkg.n_relations(); ++i)
        idx << "R\t" << fkg.relation_name(i) << '\t' << i << '\n';
}

inline EmbeddingTable load_embeddings(const std::string& bin_path) {
    std::ifstream f(bin_path, std::ios::binary);
    if (!f) throw IoError("cannot open " + bin_path);
    char magic[4];
    uint32_t version = 0, dim = 0;
    uint64_t ne = 0, nr = 0;
    uint8_t norm = 0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&dim), 4);
    f.read(reinterpret_cast<char*>(&ne), 8);
    f.read(reinterpret_cast<char*>(&nr), 8);
    f.read(reinterpret_cast<char*>(&norm), 1);
    if (!f || std::string(magic, 4) != "KGEB" || version != 1)
        throw ParseError(bin_path + ": not a KGEB v1 embedding file");
    EmbeddingTable table;
    table.norm = static_cast<Norm>(norm);
    table.entities = Tensor(ne, dim);
    table.relations = Tensor(nr, dim);
    f.read(reinterpret_cast<char*>(table.entities.data()),
           static_cast<std::streamsize>(sizeof(double) * table.entities.size()));
    f.read(reinterpret_cast<char*>(table.relations.data()),
           static_cast<std::streamsize>(sizeof(double) * table.relations.size()));
    if (!f) throw ParseError(bin_path + ": truncated embedding file");
    return table;
}

}  // namespace kegraph
