#pragma once

#include <string>
#include <tuple>
#include <vector>

#include "kegraph/graph_store.hpp"
#include "kegraph/sparse.hpp"

namespace kegraph {

// One hop of a company meta-path: follow `relation` forward (head -> tail) or
// in reverse, landing on an entity of kind `to_kind`. Paths implicitly start
// at CompanyYear and must end there.
struct MetaPathStep {
    std::string relation;
    bool reverse = false;
    EntityKind to_kind = EntityKind::CompanyYear;
};

struct MetaPathSpec {
    std::string name;
    std::vector<MetaPathStep> steps;

    // company -RPT record- company
    static MetaPathSpec rpt() {
        return {"RPT",
                {{"has_rpt", false, EntityKind::Rpt}, {"has_rpt", true, EntityKind::CompanyYear}}};
    }

    // same company, different report years
    static MetaPathSpec sc() {
        return {"SC",
                {{"same_company_as", false, EntityKind::CompanyMeta},
                 {"same_company_as", true, EntityKind::CompanyYear}}};
    }

    // shared director/supervisor/executive, via the person meta node
    static MetaPathSpec sdse() {
        return {"SDSE",
                {{"has_dse", false, EntityKind::Dse},
                 {"same_person_as", false, EntityKind::DseMeta},
                 {"same_person_as", true, EntityKind::Dse},
                 {"has_dse", true, EntityKind::CompanyYear}}};
    }

    static MetaPathSpec by_name(const std::string& name) {
        if (name == "RPT" || name == "rpt") return rpt();
        if (name == "SC" || name == "sc") return sc();
        if (name == "SDSE" || name == "sdse") return sdse();
        throw ConfigError("unknown built-in meta-path '" + name + "'");
    }

    // Custom specs from config text: steps separated by commas, each
    // "relation>kind" (forward) or "relation<kind" (reverse), e.g.
    //   has_rpt>rpt,has_rpt<cy
    static MetaPathSpec parse(const std::string& name, const std::string& text) {
        MetaPathSpec spec;
        spec.name = name;
        for (const std::string& raw : detail::split(text, ',')) {
            std::string s = raw;
            s.erase(0, s.find_first_not_of(" \t"));
            s.erase(s.find_last_not_of(" \t") + 1);
            size_t fwd = s.find('>');
            size_t rev = s.find('<');
            if ((fwd == std::string::npos) == (rev == std::string::npos))
                throw SchemaError("meta-path step '" + s + "' needs exactly one of '>' or '<'");
            const bool reverse = rev != std::string::npos;
            const size_t pos = reverse ? rev : fwd;
            auto kind = kind_from_code(s.substr(pos + 1));
            if (!kind) throw SchemaError("meta-path step '" + s + "' has unknown kind code");
            spec.steps.push_back({s.substr(0, pos), reverse, *kind});
        }
        spec.validate();
        return spec;
    }

    void validate() const {
        if (steps.empty()) throw SchemaError("meta-path '" + name + "' has no steps");
        if (steps.back().to_kind != EntityKind::CompanyYear)
            throw SchemaError("meta-path '" + name + "' must end at a company entity");
    }
};

// Per-meta-path edge weights: raw distinct-path counts plus the row-normalized
// companion used by the convolution layers.
struct MultiPathWeightMatrix {
    SparseRowMatrix counts;      // non-negative integers stored as doubles
    SparseRowMatrix normalized;  // each non-empty row sums to 1
};

struct CompanySubgraph {
    size_t node_count = 0;
    MultiPathWeightMatrix weights;
    std::string provenance;  // meta-path name or "sum_up"
};

inline SparseRowMatrix row_normalize(const SparseRowMatrix& counts) {
    return counts.row_normalized();
}

namespace detail {

// Depth-first enumeration of simple paths (no node revisited, including the
// start) that match the step sequence.
class PathCounter {
  public:
    PathCounter(const Fkg& fkg, const MetaPathSpec& spec) : fkg_(fkg), spec_(spec) {
        rel_ids_.reserve(spec.steps.size());
        for (const auto& step : spec.steps) {
            auto rid = fkg.find_relation(step.relation);
            if (!rid)
                throw SchemaError("meta-path '" + spec.name + "' references unknown relation '" +
                                  step.relation + "'");
            rel_ids_.push_back(*rid);
        }
        visited_.assign(fkg.n_entities(), 0);
    }

    // Appends (start_row, end_row, 1) triplets for every matching path.
    void count_from(uint32_t start_entity,
                    std::vector<std::tuple<uint32_t, uint32_t, double>>& out) {
        start_row_ = fkg_.company_row(start_entity);
        visited_[start_entity] = 1;
        walk(start_entity, 0, out);
        visited_[start_entity] = 0;
    }

  private:
    void walk(uint32_t at, size_t depth, std::vector<std::tuple<uint32_t, uint32_t, double>>& out) {
        if (depth == spec_.steps.size()) {
            const uint32_t row = fkg_.company_row(at);
            if (row != UINT32_MAX) out.emplace_back(start_row_, row, 1.0);
            return;
        }
        const MetaPathStep& step = spec_.steps[depth];
        const uint32_t rel = rel_ids_[depth];
        const auto range = step.reverse ? fkg_.in_edges(at) : fkg_.out_edges(at);
        for (const EdgeRef& e : range) {
            if (e.relation != rel) continue;
            if (fkg_.entity_kind(e.other) != step.to_kind) continue;
            if (visited_[e.other]) continue;
            visited_[e.other] = 1;
            walk(e.other, depth + 1, out);
            visited_[e.other] = 0;
        }
    }

    const Fkg& fkg_;
    const MetaPathSpec& spec_;
    std::vector<uint32_t> rel_ids_;
    std::vector<uint8_t> visited_;
    uint32_t start_row_ = 0;
};

}  // namespace detail

// Entry (i, j) counts the distinct meta-path instances from company i to
// company j. A path may not revisit a node, so the diagonal is zero for the
// predefined meta-paths.
inline MultiPathWeightMatrix build_weight_matrix(const Fkg& fkg, const MetaPathSpec& spec) {
    spec.validate();
    detail::PathCounter counter(fkg, spec);
    std::vector<std::tuple<uint32_t, uint32_t, double>> triplets;
    for (uint32_t row = 0; row < fkg.n_companies(); ++row)
        counter.count_from(fkg.company_entity(row), triplets);
    MultiPathWeightMatrix m;
    m.counts = SparseRowMatrix::from_triplets(fkg.n_companies(), fkg.n_companies(),
                                              std::move(triplets));
    m.normalized = m.counts.row_normalized();
    return m;
}

// Node set is all of V^c; isolated companies are retained with empty rows.
inline CompanySubgraph build_company_subgraph(const Fkg& fkg, const MetaPathSpec& spec) {
    CompanySubgraph g;
    g.node_count = fkg.n_companies();
    g.weights = build_weight_matrix(fkg, spec);
    g.provenance = spec.name;
    return g;
}

// Elementwise sum of the count matrices, renormalized afresh.
inline CompanySubgraph sum_up_graph(const std::vector<CompanySubgraph>& subgraphs) {
    if (subgraphs.empty()) throw ContractError("sum_up_graph: no subgraphs");
    CompanySubgraph out;
    out.node_count = subgraphs.front().node_count;
    out.provenance = "sum_up";
    SparseRowMatrix sum = subgraphs.front().weights.counts;
    for (size_t i = 1; i < subgraphs.size(); ++i) {
        if (subgraphs[i].node_count != out.node_count)
            throw DimensionError("sum_up_graph: node sets differ");
        sum = sum.plus(subgraphs[i].weights.counts);
    }
    out.weights.counts = std::move(sum);
    out.weights.normalized = out.weights.counts.row_normalized();
    return out;
}

}  // namespace kegraph
