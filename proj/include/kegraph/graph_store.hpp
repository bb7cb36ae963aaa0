#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kegraph/common.hpp"

namespace kegraph {

// Entity kinds of the financial knowledge graph. Keys carry the kind as a
// prefix so files stay self-describing:
//   cy:<company>_<year>   company instance for one report year
//   cm:<company>          company meta node
//   dse:<person>_<company>_<year>   one board-seat record
//   dm:<person>           person meta node
//   rpt:<id>              one related-party transaction record
//   att:<name>=<value>    categorical attribute value
enum class EntityKind : uint8_t { CompanyYear, CompanyMeta, Dse, DseMeta, Rpt, AttributeValue };

inline const char* kind_prefix(EntityKind k) {
    switch (k) {
        case EntityKind::CompanyYear: return "cy";
        case EntityKind::CompanyMeta: return "cm";
        case EntityKind::Dse: return "dse";
        case EntityKind::DseMeta: return "dm";
        case EntityKind::Rpt: return "rpt";
        case EntityKind::AttributeValue: return "att";
    }
    return "?";
}

inline std::optional<EntityKind> kind_from_prefix(std::string_view p) {
    if (p == "cy") return EntityKind::CompanyYear;
    if (p == "cm") return EntityKind::CompanyMeta;
    if (p == "dse") return EntityKind::Dse;
    if (p == "dm") return EntityKind::DseMeta;
    if (p == "rpt") return EntityKind::Rpt;
    if (p == "att") return EntityKind::AttributeValue;
    return std::nullopt;
}

inline std::optional<EntityKind> kind_from_code(std::string_view p) { return kind_from_prefix(p); }

inline EntityKind kind_of_key(const std::string& key) {
    const size_t colon = key.find(':');
    if (colon == std::string::npos)
        throw SchemaError("entity key '" + key + "' lacks a kind prefix");
    auto k = kind_from_prefix(std::string_view(key).substr(0, colon));
    if (!k) throw SchemaError("unknown entity kind in key '" + key + "'");
    return *k;
}

// Company part of a cy:<company>_<year> key.
inline std::string company_of_key(const std::string& key) {
    const size_t colon = key.find(':');
    const size_t us = key.rfind('_');
    if (colon == std::string::npos || us == std::string::npos || us <= colon) return {};
    return key.substr(colon + 1, us - colon - 1);
}

// Person part of a dse:<person>_... key.
inline std::string person_of_key(const std::string& key) {
    const size_t colon = key.find(':');
    size_t us = key.find('_', colon + 1);
    if (colon == std::string::npos) return {};
    if (us == std::string::npos) us = key.size();
    return key.substr(colon + 1, us - colon - 1);
}

struct Triple {
    uint32_t head, relation, tail;
    friend bool operator==(const Triple& a, const Triple& b) {
        return a.head == b.head && a.relation == b.relation && a.tail == b.tail;
    }
    friend bool operator<(const Triple& a, const Triple& b) {
        if (a.head != b.head) return a.head < b.head;
        if (a.relation != b.relation) return a.relation < b.relation;
        return a.tail < b.tail;
    }
};

struct LabelRecord {
    uint8_t noisy_label = 0;  // observed label
    int32_t record_year = 0;
    std::optional<int32_t> violation_year;
    std::optional<int32_t> declared_year;
};

// Real-valued company attributes with an explicit missing mask.
struct AttrMatrix {
    size_t rows = 0, cols = 0;
    std::vector<double> values;
    std::vector<uint8_t> observed;

    AttrMatrix() = default;
    AttrMatrix(size_t r, size_t c)
        : rows(r), cols(c), values(r * c, 0.0), observed(r * c, 0) {}

    double& value(size_t r, size_t c) { return values[r * cols + c]; }
    double value(size_t r, size_t c) const { return values[r * cols + c]; }
    bool is_observed(size_t r, size_t c) const { return observed[r * cols + c] != 0; }
    void set(size_t r, size_t c, double v) {
        values[r * cols + c] = v;
        observed[r * cols + c] = 1;
    }
};

struct EdgeRef {
    uint32_t relation;
    uint32_t other;
};

// Immutable after finalize(); safe for concurrent reads.
class Fkg {
  public:
    uint32_t add_entity(const std::string& key, EntityKind kind) {
        auto it = entity_by_key_.find(key);
        if (it != entity_by_key_.end()) {
            if (entity_kinds_[it->second] != kind)
                throw SchemaError("entity '" + key + "' re-declared with a different kind");
            return it->second;
        }
        const uint32_t id = static_cast<uint32_t>(entity_keys_.size());
        entity_keys_.push_back(key);
        entity_kinds_.push_back(kind);
        entity_by_key_.emplace(key, id);
        return id;
    }

    uint32_t add_entity(const std::string& key) { return add_entity(key, kind_of_key(key)); }

    uint32_t add_relation(const std::string& name) {
        auto it = relation_by_name_.find(name);
        if (it != relation_by_name_.end()) return it->second;
        const uint32_t id = static_cast<uint32_t>(relation_names_.size());
        relation_names_.push_back(name);
        relation_by_name_.emplace(name, id);
        return id;
    }

    void add_triple(uint32_t head, uint32_t relation, uint32_t tail) {
        if (head >= entity_keys_.size() || tail >= entity_keys_.size())
            throw ReferenceError("triple references unknown entity id");
        if (relation >= relation_names_.size())
            throw ReferenceError("triple references unknown relation id");
        triples_.push_back({head, relation, tail});
        finalized_ = false;
    }

    void set_company_data(std::vector<uint32_t> company_ids, AttrMatrix attrs,
                          std::vector<LabelRecord> labels) {
        if (company_ids.size() != attrs.rows || company_ids.size() != labels.size())
            throw DimensionError("company table: ids, attribute rows and labels must agree");
        companies_ = std::move(company_ids);
        attrs_ = std::move(attrs);
        labels_ = std::move(labels);
    }

    // Deduplicates triples and builds adjacency and kind indexes.
    void finalize() {
        std::sort(triples_.begin(), triples_.end());
        triples_.erase(std::unique(triples_.begin(), triples_.end()), triples_.end());

        const size_t n = entity_keys_.size();
        out_ptr_.assign(n + 1, 0);
        in_ptr_.assign(n + 1, 0);
        for (const Triple& t : triples_) {
            ++out_ptr_[t.head + 1];
            ++in_ptr_[t.tail + 1];
        }
        for (size_t i = 0; i < n; ++i) {
            out_ptr_[i + 1] += out_ptr_[i];
            in_ptr_[i + 1] += in_ptr_[i];
        }
        out_edges_.resize(triples_.size());
        in_edges_.resize(triples_.size());
        std::vector<size_t> ocur(out_ptr_.begin(), out_ptr_.end() - 1);
        std::vector<size_t> icur(in_ptr_.begin(), in_ptr_.end() - 1);
        for (const Triple& t : triples_) {
            out_edges_[ocur[t.head]++] = {t.relation, t.tail};
            in_edges_[icur[t.tail]++] = {t.relation, t.head};
        }

        by_kind_.assign(6, {});
        for (uint32_t id = 0; id < n; ++id)
            by_kind_[static_cast<size_t>(entity_kinds_[id])].push_back(id);

        company_row_.assign(n, UINT32_MAX);
        for (uint32_t r = 0; r < companies_.size(); ++r) company_row_[companies_[r]] = r;

        triple_set_.clear();
        triple_set_.reserve(triples_.size() * 2);
        for (const Triple& t : triples_) triple_set_.insert(pack(t));
        finalized_ = true;
    }

    size_t n_entities() const { return entity_keys_.size(); }
    size_t n_relations() const { return relation_names_.size(); }
    size_t n_triples() const { return triples_.size(); }
    size_t n_companies() const { return companies_.size(); }

    const std::string& entity_key(uint32_t id) const { return entity_keys_[id]; }
    EntityKind entity_kind(uint32_t id) const { return entity_kinds_[id]; }
    const std::string& relation_name(uint32_t id) const { return relation_names_[id]; }

    std::optional<uint32_t> find_entity(const std::string& key) const {
        auto it = entity_by_key_.find(key);
        if (it == entity_by_key_.end()) return std::nullopt;
        return it->second;
    }

    std::optional<uint32_t> find_relation(const std::string& name) const {
        auto it = relation_by_name_.find(name);
        if (it == relation_by_name_.end()) return std::nullopt;
        return it->second;
    }

    const std::vector<Triple>& triples() const { return triples_; }
    const std::vector<uint32_t>& companies() const { return companies_; }
    const std::vector<uint32_t>& entities_of_kind(EntityKind k) const {
        return by_kind_[static_cast<size_t>(k)];
    }

    uint32_t company_row(uint32_t entity) const { return company_row_[entity]; }
    uint32_t company_entity(uint32_t row) const { return companies_[row]; }

    const AttrMatrix& attrs() const { return attrs_; }
    const std::vector<LabelRecord>& labels() const { return labels_; }
    std::vector<LabelRecord>& mutable_labels() { return labels_; }

    bool has_triple(uint32_t h, uint32_t r, uint32_t t) const {
        return triple_set_.count(pack({h, r, t})) != 0;
    }

    struct EdgeRange {
        const EdgeRef* first;
        const EdgeRef* last;
        const EdgeRef* begin() const { return first; }
        const EdgeRef* end() const { return last; }
    };

    EdgeRange out_edges(uint32_t id) const {
        return {out_edges_.data() + out_ptr_[id], out_edges_.data() + out_ptr_[id + 1]};
    }
    EdgeRange in_edges(uint32_t id) const {
        return {in_edges_.data() + in_ptr_[id], in_edges_.data() + in_ptr_[id + 1]};
    }

  private:
    static std::string pack(const Triple& t) {
        std::string s(12, '\0');
        std::memcpy(s.data(), &t.head, 4);
        std::memcpy(s.data() + 4, &t.relation, 4);
        std::memcpy(s.data() + 8, &t.tail, 4);
        return s;
    }

    std::vector<std::string> entity_keys_;
    std::vector<EntityKind> entity_kinds_;
    std::unordered_map<std::string, uint32_t> entity_by_key_;
    std::vector<std::string> relation_names_;
    std::unordered_map<std::string, uint32_t> relation_by_name_;
    std::vector<Triple> triples_;
    std::vector<size_t> out_ptr_, in_ptr_;
    std::vector<EdgeRef> out_edges_, in_edges_;
    std::vector<std::vector<uint32_t>> by_kind_;
    std::vector<uint32_t> companies_;
    std::vector<uint32_t> company_row_;
    AttrMatrix attrs_;
    std::vector<LabelRecord> labels_;
    std::unordered_set<std::string> triple_set_;
    bool finalized_ = false;
};

namespace detail {

inline std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        const size_t p = line.find(sep, start);
        if (p == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, p - start));
        start = p + 1;
    }
    return out;
}

inline std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

inline int32_t parse_int(const std::string& s, const std::string& where) {
    try {
        size_t pos = 0;
        const long v = std::stol(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return static_cast<int32_t>(v);
    } catch (const std::exception&) {
        throw ParseError(where + ": expected integer, got '" + s + "'");
    }
}

inline double parse_double(const std::string& s, const std::string& where) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || s.empty())
        throw ParseError(where + ": expected number, got '" + s + "'");
    return v;
}

inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

// Loads a financial knowledge graph from the three flat files. Company index
// order is the attribute-file row order; every label row must match an
// attribute row by (company_key, year) and vice versa.
inline Fkg load_fkg(const std::string& triples_path, const std::string& attrs_path,
                    const std::string& labels_path) {
    Fkg fkg;

    // Attributes first: they define the company table.
    std::ifstream af(attrs_path);
    if (!af) throw IoError("cannot open attributes file: " + attrs_path);
    std::string line;
    size_t lineno = 0;
    size_t d_att = 0;
    std::vector<uint32_t> company_ids;
    std::vector<std::pair<std::string, int32_t>> company_keys;  // (company, year)
    std::vector<std::vector<std::pair<bool, double>>> rows;
    std::unordered_map<std::string, uint32_t> row_by_key;
    while (std::getline(af, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        const auto where = attrs_path + ":" + std::to_string(lineno);
        auto fields = detail::split(line, ',');
        if (lineno == 1) {
            if (fields.size() < 2 || fields[0] != "company_key" || fields[1] != "year")
                throw ParseError(where + ": header must start with company_key,year");
            d_att = fields.size() - 2;
            continue;
        }
        if (fields.size() != d_att + 2)
            throw ParseError(where + ": expected " + std::to_string(d_att + 2) + " fields, got " +
                             std::to_string(fields.size()));
        const std::string& company = fields[0];
        const int32_t year = detail::parse_int(fields[1], where);
        const std::string key = "cy:" + company + "_" + std::to_string(year);
        if (row_by_key.count(key)) throw ParseError(where + ": duplicate company row " + key);
        row_by_key[key] = static_cast<uint32_t>(company_ids.size());
        company_ids.push_back(fkg.add_entity(key, EntityKind::CompanyYear));
        company_keys.emplace_back(company, year);
        std::vector<std::pair<bool, double>> vals(d_att, {false, 0.0});
        for (size_t j = 0; j < d_att; ++j) {
            if (fields[j + 2].empty()) continue;
            vals[j] = {true, detail::parse_double(fields[j + 2], where)};
        }
        rows.push_back(std::move(vals));
    }

    // Triples.
    std::ifstream tf(triples_path);
    if (!tf) throw IoError("cannot open triples file: " + triples_path);
    lineno = 0;
    while (std::getline(tf, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty() || line[0] == '#') continue;
        const auto where = triples_path + ":" + std::to_string(lineno);
        const size_t t1 = line.find('\t');
        const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
            throw ParseError(where + ": expected head<TAB>relation<TAB>tail");
        const std::string head = line.substr(0, t1);
        const std::string rel = line.substr(t1 + 1, t2 - t1 - 1);
        const std::string tail = line.substr(t2 + 1);
        if (head.empty() || rel.empty() || tail.empty())
            throw ParseError(where + ": empty field");
        uint32_t h, t;
        try {
            h = fkg.add_entity(head);
            t = fkg.add_entity(tail);
        } catch (const SchemaError& e) {
            throw SchemaError(where + ": " + e.what());
        }
        fkg.add_triple(h, fkg.add_relation(rel), t);
    }

    // Labels.
    std::ifstream lf(labels_path);
    if (!lf) throw IoError("cannot open labels file: " + labels_path);
    lineno = 0;
    std::vector<LabelRecord> labels(company_ids.size());
    std::vector<uint8_t> seen(company_ids.size(), 0);
    while (std::getline(lf, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        const auto where = labels_path + ":" + std::to_string(lineno);
        auto fields = detail::split(line, ',');
        if (lineno == 1) {
            if (fields.size() != 5 || fields[0] != "company_key" || fields[1] != "year" ||
                fields[2] != "label" || fields[3] != "violation_year" || fields[4] != "declared_year")
                throw ParseError(where + ": bad labels header");
            continue;
        }
        if (fields.size() != 5) throw ParseError(where + ": expected 5 fields");
        const std::string key = "cy:" + fields[0] + "_" + fields[1];
        auto it = row_by_key.find(key);
        if (it == row_by_key.end())
            throw ReferenceError(where + ": label row references unknown company " + key);
        if (seen[it->second]) throw ParseError(where + ": duplicate label row for " + key);
        seen[it->second] = 1;
        LabelRecord rec;
        rec.record_year = detail::parse_int(fields[1], where);
        const int32_t lbl = detail::parse_int(fields[2], where);
        if (lbl != 0 && lbl != 1) throw ParseError(where + ": label must be 0 or 1");
        rec.noisy_label = static_cast<uint8_t>(lbl);
        if (!fields[3].empty()) rec.violation_year = detail::parse_int(fields[3], where);
        if (!fields[4].empty()) rec.declared_year = detail::parse_int(fields[4], where);
        labels[it->second] = rec;
    }
    for (size_t i = 0; i < seen.size(); ++i)
        if (!seen[i])
            throw ReferenceError(labels_path + ": no label row for company " +
                                 fkg.entity_key(company_ids[i]));

    AttrMatrix attrs(rows.size(), d_att);
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j < d_att; ++j)
            if (rows[i][j].first) attrs.set(i, j, rows[i][j].second);

    fkg.set_company_data(std::move(company_ids), std::move(attrs), std::move(labels));
    fkg.finalize();
    return fkg;
}

// Writes the three files back out in a deterministic order. Doubles use 17
// significant digits, so a reload reproduces the attribute matrix bit-exactly.
inline void save_fkg(const Fkg& fkg, const std::string& triples_path,
                     const std::string& attrs_path, const std::string& labels_path) {
    std::ofstream tf(triples_path);
    if (!tf) throw IoError("cannot write " + triples_path);
    for (const Triple& t : fkg.triples())
        tf << fkg.entity_key(t.head) << '\t' << fkg.relation_name(t.relation) << '\t'
           << fkg.entity_key(t.tail) << '\n';

    std::ofstream af(attrs_path);
    if (!af) throw IoError("cannot write " + attrs_path);
    af << "company_key,year";
    for (size_t j = 0; j < fkg.attrs().cols; ++j) af << ",f_" << j;
    af << '\n';
    for (size_t r = 0; r < fkg.n_companies(); ++r) {
        const std::string& key = fkg.entity_key(fkg.company_entity(static_cast<uint32_t>(r)));
        af << company_of_key(key) << ',' << fkg.labels()[r].record_year;
        for (size_t j = 0; j < fkg.attrs().cols; ++j) {
            af << ',';
            if (fkg.attrs().is_observed(r, j)) af << detail::fmt_double(fkg.attrs().value(r, j));
        }
        af << '\n';
    }

    std::ofstream lf(labels_path);
    if (!lf) throw IoError("cannot write " + labels_path);
    lf << "company_key,year,label,violation_year,declared_year\n";
    for (size_t r = 0; r < fkg.n_companies(); ++r) {
        const std::string& key = fkg.entity_key(fkg.company_entity(static_cast<uint32_t>(r)));
        const LabelRecord& rec = fkg.labels()[r];
        lf << company_of_key(key) << ',' << rec.record_year << ',' << int(rec.noisy_label) << ',';
        if (rec.violation_year) lf << *rec.violation_year;
        lf << ',';
        if (rec.declared_year) lf << *rec.declared_year;
        lf << '\n';
    }
}

struct ValidationFinding {
    std::string invariant;
    size_t count = 0;
    std::vector<std::string> examples;  // first 10 offending identifiers
};

struct ValidationReport {
    std::vector<ValidationFinding> findings;
    bool empty() const { return findings.empty(); }

    std::string to_string() const {
        if (findings.empty()) return "ok: all invariants hold\n";
        std::ostringstream os;
        for (const auto& f : findings) {
            os << f.invariant << ": " << f.count << " violation(s)";
            for (const auto& e : f.examples) os << "\n  " << e;
            os << '\n';
        }
        return os.str();
    }
};

// Checks the structural invariants; findings are reported, never thrown.
inline ValidationReport validate_schema(const Fkg& fkg) {
    ValidationReport report;
    auto add = [&report](const std::string& name, const std::vector<std::string>& offenders) {
        if (offenders.empty()) return;
        ValidationFinding f;
        f.invariant = name;
        f.count = offenders.size();
        f.examples.assign(offenders.begin(),
                          offenders.begin() + std::min<size_t>(offenders.size(), 10));
        report.findings.push_back(std::move(f));
    };

    const auto meta_check = [&fkg](EntityKind inst_kind, EntityKind meta_kind,
                                   const std::string& rel_name,
                                   std::string (*group_of)(const std::string&)) {
        std::vector<std::string> offenders;
        const auto rel = fkg.find_relation(rel_name);
        std::unordered_map<std::string, uint32_t> group_meta;
        for (uint32_t id : fkg.entities_of_kind(inst_kind)) {
            uint32_t meta = UINT32_MAX;
            size_t links = 0;
            if (rel) {
                for (const EdgeRef& e : fkg.out_edges(id)) {
                    if (e.relation != *rel) continue;
                    if (fkg.entity_kind(e.other) != meta_kind) continue;
                    ++links;
                    meta = e.other;
                }
            }
            if (links != 1) {
                offenders.push_back(fkg.entity_key(id) + " has " + std::to_string(links) + " " +
                                    rel_name + " link(s)");
                continue;
            }
            const std::string group = group_of(fkg.entity_key(id));
            auto [it, inserted] = group_meta.emplace(group, meta);
            if (!inserted && it->second != meta)
                offenders.push_back(fkg.entity_key(id) + " points to a different meta than its group");
        }
        return offenders;
    };

    add("company-meta-link",
        meta_check(EntityKind::CompanyYear, EntityKind::CompanyMeta, "same_company_as",
                   [](const std::string& k) { return company_of_key(k); }));
    add("dse-meta-link",
        meta_check(EntityKind::Dse, EntityKind::DseMeta, "same_person_as",
                   [](const std::string& k) { return person_of_key(k); }));

    {
        std::vector<std::string> offenders;
        for (uint32_t id : fkg.entities_of_kind(EntityKind::CompanyYear))
            if (fkg.company_row(id) == UINT32_MAX)
                offenders.push_back(fkg.entity_key(id) + " has no attribute/label row");
        if (fkg.n_companies() != fkg.attrs().rows || fkg.n_companies() != fkg.labels().size())
            offenders.push_back("company table sizes disagree: companies=" +
                                std::to_string(fkg.n_companies()) +
                                " attrs=" + std::to_string(fkg.attrs().rows) +
                                " labels=" + std::to_string(fkg.labels().size()));
        add("company-table-coverage", offenders);
    }

    {
        std::vector<std::string> offenders;
        for (size_t r = 0; r < fkg.labels().size(); ++r) {
            const LabelRecord& rec = fkg.labels()[r];
            if (rec.noisy_label != 1) continue;
            const std::string& key = fkg.entity_key(fkg.company_entity(static_cast<uint32_t>(r)));
            if (!rec.violation_year || !rec.declared_year)
                offenders.push_back(key + " labeled fraud without violation/declared year");
            else if (*rec.declared_year < *rec.violation_year)
                offenders.push_back(key + " declared_year precedes violation_year");
        }
        add("label-year-order", offenders);
    }

    return report;
}

}  // namespace kegraph
