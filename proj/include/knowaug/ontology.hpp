#pragma once

// Medical ontology graphs: cohort codes as leaves, hierarchy-file categories
// as ancestors. Nodes are indexed leaves-first (matching the vocabulary
// order) and then ancestors by increasing height above the leaves.

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "knowaug/config.hpp"
#include "knowaug/emr.hpp"
#include "knowaug/errors.hpp"

namespace knowaug {

struct OntologyGraph {
    CodeKind kind = CodeKind::Diagnosis;
    std::size_t n_leaves = 0;
    std::vector<std::string> names;                   // node index -> code string
    std::vector<std::vector<std::size_t>> ancestors;  // node -> root path, nearest first
    std::vector<std::vector<std::size_t>> children;   // node -> direct children
    std::vector<std::size_t> height;                  // leaves 0; parents above all children
    std::size_t root = 0;

    std::size_t n_nodes() const { return names.size(); }
    bool is_leaf(std::size_t node) const { return node < n_leaves; }

    const std::vector<std::size_t>& pa(std::size_t node) const {
        if (node >= n_nodes()) throw data_error("ontology: unknown node index " + std::to_string(node));
        return ancestors[node];
    }
    const std::vector<std::size_t>& ch(std::size_t node) const {
        if (node >= n_nodes()) throw data_error("ontology: unknown node index " + std::to_string(node));
        return children[node];
    }

    std::size_t index_of(const std::string& name) const {
        auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) throw data_error("ontology: unknown code " + name);
        return static_cast<std::size_t>(it - names.begin());
    }

    // Non-leaf indices ordered so every node appears after all its children.
    std::vector<std::size_t> bottom_up_internal_order() const {
        std::vector<std::size_t> order;
        for (std::size_t i = n_leaves; i < n_nodes(); ++i) order.push_back(i);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return height[a] != height[b] ? height[a] < height[b] : a < b;
        });
        return order;
    }
};

namespace detail {

// Hierarchy file: one `child<TAB>parent` line per edge. A root is declared by
// a self-referential line or by appearing only as a parent.
inline std::map<std::string, std::string> read_hierarchy(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open hierarchy file: " + path);
    std::map<std::string, std::string> parent_of;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto tab = t.find('\t');
        if (tab == std::string::npos)
            throw data_error(path + ":" + std::to_string(lineno) + ": expected `child<TAB>parent`");
        std::string child = trim(std::string_view(t).substr(0, tab));
        std::string parent = trim(std::string_view(t).substr(tab + 1));
        if (child.empty() || parent.empty())
            throw data_error(path + ":" + std::to_string(lineno) + ": empty code name");
        auto it = parent_of.find(child);
        if (it != parent_of.end() && it->second != parent)
            throw data_error(path + ":" + std::to_string(lineno) + ": conflicting parents for " + child);
        parent_of[child] = parent;
    }
    return parent_of;
}

}  // namespace detail

inline constexpr const char* kSyntheticSuperRoot = "__root__";

inline OntologyGraph build_ontology_graph(const std::vector<std::string>& leaf_codes,
                                          const std::string& hierarchy_path, CodeKind kind) {
    if (leaf_codes.empty()) throw data_error("ontology: no leaf codes");
    auto parent_of = detail::read_hierarchy(hierarchy_path);

    std::vector<std::string> missing;
    for (const auto& code : leaf_codes)
        if (!parent_of.count(code)) missing.push_back(code);
    if (!missing.empty()) {
        std::string msg = "ontology: cohort codes absent from hierarchy:";
        for (const auto& m : missing) msg += " " + m;
        throw data_error(msg);
    }

    // Walk each leaf's chain to a root, collecting the used ancestor closure.
    std::map<std::string, std::vector<std::string>> chain_of;  // leaf -> ancestors, nearest first
    std::set<std::string> roots;
    for (const auto& leaf : leaf_codes) {
        std::vector<std::string> chain;
        std::set<std::string> seen{leaf};
        std::string cur = leaf;
        for (;;) {
            auto it = parent_of.find(cur);
            if (it == parent_of.end()) {  // absent parent entry: cur is a root
                roots.insert(cur);
                break;
            }
            const std::string& par = it->second;
            if (par == cur) {  // self-referential root declaration
                roots.insert(cur);
                break;
            }
            if (seen.count(par))
                throw data_error("ontology: cycle in hierarchy at " + par + " (reached from " + leaf + ")");
            seen.insert(par);
            chain.push_back(par);
            cur = par;
        }
        chain_of[leaf] = std::move(chain);
    }

    bool super_root = roots.size() > 1;
    std::string root_name = super_root ? kSyntheticSuperRoot : *roots.begin();

    std::set<std::string> leaf_set(leaf_codes.begin(), leaf_codes.end());
    for (const auto& leaf : leaf_codes)
        for (const auto& anc : chain_of[leaf])
            if (leaf_set.count(anc))
                throw data_error("ontology: cohort code " + anc + " appears as an ancestor of " + leaf);

    OntologyGraph g;
    g.kind = kind;
    g.n_leaves = leaf_codes.size();
    g.names = leaf_codes;

    // Height above the leaves: position in the chain, maximized over leaves
    // sharing the ancestor. Guarantees children (lower height) precede
    // parents in the index order.
    std::map<std::string, std::size_t> height_of;
    for (const auto& leaf : leaf_codes) {
        const auto& chain = chain_of[leaf];
        for (std::size_t k = 0; k < chain.size(); ++k) {
            auto [it, inserted] = height_of.try_emplace(chain[k], k + 1);
            if (!inserted) it->second = std::max(it->second, k + 1);
        }
    }
    if (super_root) {
        std::size_t top = 0;
        for (const auto& [_, h] : height_of) top = std::max(top, h);
        height_of[root_name] = top + 1;
    }

    std::vector<std::pair<std::size_t, std::string>> internal;
    for (const auto& [name, h] : height_of) internal.emplace_back(h, name);
    std::sort(internal.begin(), internal.end());
    std::map<std::string, std::size_t> index_of;
    for (std::size_t i = 0; i < leaf_codes.size(); ++i) index_of[leaf_codes[i]] = i;
    for (const auto& [h, name] : internal) {
        index_of[name] = g.names.size();
        g.names.push_back(name);
    }

    g.ancestors.assign(g.n_nodes(), {});
    g.children.assign(g.n_nodes(), {});
    g.height.assign(g.n_nodes(), 0);
    for (const auto& [h, name] : internal) g.height[index_of[name]] = h;
    g.root = index_of[root_name];

    auto add_child = [&](std::size_t parent, std::size_t child) {
        auto& ch = g.children[parent];
        if (std::find(ch.begin(), ch.end(), child) == ch.end()) ch.push_back(child);
    };

    for (const auto& leaf : leaf_codes) {
        std::size_t li = index_of[leaf];
        std::vector<std::size_t> chain;
        for (const auto& anc : chain_of[leaf]) chain.push_back(index_of[anc]);
        if (super_root) chain.push_back(g.root);
        g.ancestors[li] = chain;
        std::size_t prev = li;
        for (std::size_t a : chain) {
            add_child(a, prev);
            prev = a;
        }
    }
    // Ancestor chains for internal nodes follow from any leaf chain passing
    // through them; suffixes of leaf chains are consistent because each node
    // has one parent.
    for (const auto& leaf : leaf_codes) {
        std::size_t li = index_of[leaf];
        const auto& chain = g.ancestors[li];
        for (std::size_t k = 0; k < chain.size(); ++k) {
            std::size_t node = chain[k];
            if (g.ancestors[node].empty() && node != g.root)
                g.ancestors[node].assign(chain.begin() + k + 1, chain.end());
        }
    }
    for (auto& ch : g.children) std::sort(ch.begin(), ch.end());
    return g;
}

}  // namespace knowaug
