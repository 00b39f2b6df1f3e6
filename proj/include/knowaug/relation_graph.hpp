#pragma once

// Medical prior relation graph: visit-level co-occurrence counts over the
// joint diagnosis+medication code space, PMI edge weights, and the
// zeta-thresholded symmetric adjacency.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "knowaug/emr.hpp"
#include "knowaug/errors.hpp"
#include "knowaug/matrix.hpp"

namespace knowaug {

struct CooccurrenceStats {
    std::size_t n_codes = 0;
    std::size_t total_visits = 0;                                  // |R|
    std::vector<std::size_t> occur;                                // visits containing code i
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> pair_count;  // key i<j

    std::size_t pair(std::size_t i, std::size_t j) const {
        if (i == j) return 0;
        auto it = pair_count.find(std::minmax(i, j));
        return it == pair_count.end() ? 0 : it->second;
    }
};

// Each visit is one record: a set of joint-space code indices. Codes repeated
// within a visit count once; heterogeneity between kinds is ignored.
inline CooccurrenceStats count_cooccurrence(const std::vector<std::vector<std::size_t>>& visits,
                                            std::size_t n_codes) {
    if (visits.empty()) throw data_error("co-occurrence: no visits");
    CooccurrenceStats s;
    s.n_codes = n_codes;
    s.total_visits = visits.size();
    s.occur.assign(n_codes, 0);
    for (const auto& visit : visits) {
        std::set<std::size_t> codes(visit.begin(), visit.end());
        for (auto c : codes) {
            if (c >= n_codes) throw data_error("co-occurrence: code index " + std::to_string(c) + " out of range");
            ++s.occur[c];
        }
        for (auto i = codes.begin(); i != codes.end(); ++i) {
            auto j = i;
            for (++j; j != codes.end(); ++j) ++s.pair_count[{*i, *j}];
        }
    }
    return s;
}

// Joint-space visit code sets for graph construction: all visits of the given
// single-visit patients plus all visits of the selected multi-visit patients.
inline std::vector<std::vector<std::size_t>> graph_visit_sets(const Cohort& cohort,
                                                              const std::vector<std::size_t>& multi_subset) {
    std::vector<std::vector<std::size_t>> sets;
    auto add = [&](const PatientRecord& p) {
        for (const auto& v : p.visits) {
            std::vector<std::size_t> codes = v.dx;
            for (auto m : v.rx) codes.push_back(cohort.n_dx() + m);
            sets.push_back(std::move(codes));
        }
    };
    for (const auto& p : cohort.single_visit) add(p);
    for (auto idx : multi_subset) add(cohort.multi_visit.at(idx));
    return sets;
}

// PMI(c_i, c_j) = ln( p(c_i,c_j) * |R| / (p(c_i) * p(c_j)) ) over raw counts.
// Never-co-occurring pairs carry -inf, the "no edge" sentinel.
inline double pmi(const CooccurrenceStats& s, std::size_t i, std::size_t j) {
    if (i >= s.n_codes || j >= s.n_codes)
        throw data_error("pmi: code index out of range");
    if (s.occur[i] == 0 || s.occur[j] == 0)
        throw data_error("pmi: zero marginal count for code " + std::to_string(s.occur[i] == 0 ? i : j));
    std::size_t joint = s.pair(i, j);
    if (joint == 0) return -std::numeric_limits<double>::infinity();
    double num = static_cast<double>(joint) * static_cast<double>(s.total_visits);
    double den = static_cast<double>(s.occur[i]) * static_cast<double>(s.occur[j]);
    return std::log(num / den);
}

inline double pmi_max(const CooccurrenceStats& s) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& [key, _] : s.pair_count) best = std::max(best, pmi(s, key.first, key.second));
    return best;
}

struct RelationGraph {
    std::size_t n_codes = 0;
    Matrix adjacency;  // symmetric, zero diagonal
    double zeta = 0.0;

    std::size_t edge_count() const {
        std::size_t e = 0;
        for (std::size_t i = 0; i < n_codes; ++i)
            for (std::size_t j = i + 1; j < n_codes; ++j)
                if (adjacency(i, j) > 0.0) ++e;
        return e;
    }

    std::vector<std::vector<std::size_t>> neighborhoods_with_self() const {
        std::vector<std::vector<std::size_t>> out(n_codes);
        for (std::size_t i = 0; i < n_codes; ++i) {
            out[i].push_back(i);
            for (std::size_t j = 0; j < n_codes; ++j)
                if (j != i && adjacency(i, j) > 0.0) out[i].push_back(j);
        }
        return out;
    }
};

// A(i,j) = PMI(i,j) when PMI > zeta, else 0. A zeta outside (0, PMI_max) is
// reported as a warning so threshold sweeps can probe the boundaries.
inline RelationGraph build_adjacency(const CooccurrenceStats& s, double zeta,
                                     std::vector<std::string>* warnings = nullptr) {
    double top = pmi_max(s);
    if (warnings && !(zeta > 0.0 && zeta < top))
        warnings->push_back("zeta " + std::to_string(zeta) + " outside (0, " + std::to_string(top) +
                            "); thresholding proceeds");
    RelationGraph g;
    g.n_codes = s.n_codes;
    g.zeta = zeta;
    g.adjacency = Matrix::zeros(s.n_codes, s.n_codes);
    for (const auto& [key, _] : s.pair_count) {
        double w = pmi(s, key.first, key.second);
        if (w > zeta) {
            g.adjacency(key.first, key.second) = w;
            g.adjacency(key.second, key.first) = w;
        }
    }
    return g;
}

// Edge-list export `i<TAB>j<TAB>weight` (i<j), full precision.
inline void export_edges(const RelationGraph& g, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot open edge file for writing: " + path);
    out.precision(17);
    out << "# nodes " << g.n_codes << " zeta " << g.zeta << '\n';
    for (std::size_t i = 0; i < g.n_codes; ++i)
        for (std::size_t j = i + 1; j < g.n_codes; ++j)
            if (g.adjacency(i, j) > 0.0) out << i << '\t' << j << '\t' << g.adjacency(i, j) << '\n';
}

inline RelationGraph import_edges(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open edge file: " + path);
    std::string header;
    std::getline(in, header);
    RelationGraph g;
    {
        std::istringstream hs(header);
        std::string hash, nodes_kw, zeta_kw;
        std::size_t n = 0;
        double zeta = 0.0;
        if (!(hs >> hash >> nodes_kw >> n >> zeta_kw >> zeta) || hash != "#" || nodes_kw != "nodes" ||
            zeta_kw != "zeta")
            throw data_error(path + ":1: malformed edge-list header");
        g.n_codes = n;
        g.zeta = zeta;
    }
    g.adjacency = Matrix::zeros(g.n_codes, g.n_codes);
    std::size_t lineno = 1;
    std::string line;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        std::istringstream ls(line);
        std::size_t i = 0, j = 0;
        double w = 0.0;
        if (!(ls >> i >> j >> w) || i >= g.n_codes || j >= g.n_codes)
            throw data_error(path + ":" + std::to_string(lineno) + ": malformed edge line");
        g.adjacency(i, j) = w;
        g.adjacency(j, i) = w;
    }
    return g;
}

// Joint-space code manifest `index<TAB>kind<TAB>code`.
inline void write_code_manifest(const Cohort& cohort, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot open code manifest for writing: " + path);
    for (std::size_t i = 0; i < cohort.n_dx(); ++i)
        out << i << "\tdiagnosis\t" << cohort.dx_vocab[i] << '\n';
    for (std::size_t i = 0; i < cohort.n_rx(); ++i)
        out << cohort.n_dx() + i << "\tmedication\t" << cohort.rx_vocab[i] << '\n';
}

}  // namespace knowaug
