#pragma once

// Graph encoders: multi-head graph attention with two-pass ontology message
// passing, and the single-layer degree-normalized weighted GCN for the
// relation graph. All forward passes build onto an autodiff tape.

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "knowaug/binding.hpp"
#include "knowaug/errors.hpp"
#include "knowaug/graph.hpp"
#include "knowaug/matrix.hpp"
#include "knowaug/ontology.hpp"
#include "knowaug/rng.hpp"

namespace knowaug {

enum class Activation { Sigmoid, Elu };
enum class EncoderKind { Attention, Convolution };  // the A / C axis of the encoder study

inline EncoderKind parse_encoder_kind(const std::string& s) {
    if (s == "A" || s == "a" || s == "attention" || s == "gat") return EncoderKind::Attention;
    if (s == "C" || s == "c" || s == "convolution" || s == "gcn") return EncoderKind::Convolution;
    throw config_error("unknown encoder kind: " + s + " (expected A or C)");
}

inline Activation parse_activation(const std::string& s) {
    if (s == "sigmoid") return Activation::Sigmoid;
    if (s == "elu") return Activation::Elu;
    throw config_error("unknown activation: " + s + " (expected sigmoid or elu)");
}

enum class EmbeddingSource { Initial, OntologyAugmented, RelationAugmented };

struct NodeEmbeddings {
    EmbeddingSource source = EmbeddingSource::Initial;
    Matrix rows;  // node index -> embedding row
};

// Seeded per-row uniform init in [-1/sqrt(d), 1/sqrt(d)].
inline Matrix init_embedding_table(std::size_t n, std::size_t d, Rng& rng) {
    double b = 1.0 / std::sqrt(static_cast<double>(d));
    return Matrix::uniform(n, d, -b, b, rng);
}

// ---------------------------------------------------------------------------
// Graph attention

struct GatDims {
    std::size_t in_dim = 0;
    std::size_t head_dim = 0;  // m
    std::size_t heads = 1;     // K
    double leaky_slope = 0.01;

    std::size_t out_dim() const { return head_dim * heads; }

    void validate() const {
        if (in_dim == 0 || head_dim == 0 || heads == 0) throw config_error("gat: dimensions must be positive");
    }
};

// Square attention dims per the d = K*m convention.
inline GatDims square_gat_dims(std::size_t d, std::size_t heads, double leaky_slope = 0.01) {
    if (heads == 0 || d % heads != 0)
        throw config_error("gat: embedding width " + std::to_string(d) + " not divisible by " +
                           std::to_string(heads) + " heads");
    return GatDims{d, d / heads, heads, leaky_slope};
}

// Registers per-head projections `<prefix>.W<k>` (m x d) and attention
// vectors `<prefix>.a<k>` (2m x 1).
inline void init_gat_params(ParamStore& store, const std::string& prefix, const GatDims& dims, Rng& rng) {
    dims.validate();
    double wb = 1.0 / std::sqrt(static_cast<double>(dims.in_dim));
    double ab = 1.0 / std::sqrt(static_cast<double>(dims.head_dim));
    for (std::size_t k = 0; k < dims.heads; ++k) {
        store.add(prefix + ".W" + std::to_string(k), Matrix::uniform(dims.head_dim, dims.in_dim, -wb, wb, rng));
        store.add(prefix + ".a" + std::to_string(k), Matrix::uniform(2 * dims.head_dim, 1, -ab, ab, rng));
    }
}

struct GatVars {
    GatDims dims;
    std::vector<Graph::Var> W;  // per head, m x in_dim
    std::vector<Graph::Var> a;  // per head, 2m x 1
};

inline GatVars bind_gat(BoundParams& bp, const std::string& prefix, const GatDims& dims) {
    GatVars v;
    v.dims = dims;
    for (std::size_t k = 0; k < dims.heads; ++k) {
        v.W.push_back(bp.bind(prefix + ".W" + std::to_string(k)));
        v.a.push_back(bp.bind(prefix + ".a" + std::to_string(k)));
    }
    return v;
}

struct GatNodeResult {
    std::vector<Graph::Var> alphas;  // per head, 1 x |neighborhood|
    Graph::Var output;               // 1 x out_dim
};

// One attention aggregation: the center attends over `neigh` (n_i x in_dim,
// self row included by the caller per the self-inclusive neighborhood).
// Scores are LeakyReLU(a_src . W v_center + a_dst . W v_j) softmaxed over j;
// the output concatenates per-head activated weighted sums.
inline GatNodeResult gat_node(Graph& g, const GatVars& p, Graph::Var center, Graph::Var neigh, Activation act) {
    const Matrix& nv = g.value(neigh);
    if (nv.rows == 0) throw contract_error("gat: empty neighborhood");
    GatNodeResult res;
    std::vector<Graph::Var> heads;
    std::vector<std::size_t> src_rows(p.dims.head_dim), dst_rows(p.dims.head_dim);
    std::iota(src_rows.begin(), src_rows.end(), 0);
    std::iota(dst_rows.begin(), dst_rows.end(), p.dims.head_dim);
    for (std::size_t k = 0; k < p.dims.heads; ++k) {
        Graph::Var wt = g.transpose_(p.W[k]);                       // in_dim x m
        Graph::Var proj = g.matmul(neigh, wt);                      // n_i x m
        Graph::Var cproj = g.matmul(center, wt);                    // 1 x m
        Graph::Var a_src = g.row_gather(p.a[k], src_rows);          // m x 1
        Graph::Var a_dst = g.row_gather(p.a[k], dst_rows);          // m x 1
        Graph::Var dst = g.matmul(proj, a_dst);                     // n_i x 1
        Graph::Var src = g.matmul(cproj, a_src);                    // 1 x 1
        Graph::Var logits = g.transpose_(g.add_scalar(dst, src));   // 1 x n_i
        Graph::Var alpha = g.softmax_row(g.leaky_relu(logits, p.dims.leaky_slope));
        res.alphas.push_back(alpha);
        Graph::Var agg = g.matmul(alpha, proj);                     // 1 x m
        heads.push_back(act == Activation::Sigmoid ? g.sigmoid(agg) : g.elu(agg));
    }
    res.output = heads.size() == 1 ? heads[0] : g.concat_cols(std::span<const Graph::Var>(heads));
    return res;
}

// Per-node attention over an explicit neighborhood list against a shared
// feature table (n x in_dim rows). Neighborhoods must be nonempty and are
// expected to contain the node itself.
inline Graph::Var gat_encode(Graph& g, const GatVars& p, Graph::Var features,
                             const std::vector<std::vector<std::size_t>>& neighborhoods, Activation act) {
    std::vector<Graph::Var> rows;
    rows.reserve(neighborhoods.size());
    for (std::size_t i = 0; i < neighborhoods.size(); ++i) {
        Graph::Var center = g.row_gather(features, {i});
        Graph::Var neigh = g.row_gather(features, neighborhoods[i]);
        rows.push_back(gat_node(g, p, center, neigh, act).output);
    }
    return g.concat_rows(std::span<const Graph::Var>(rows));
}

// ---------------------------------------------------------------------------
// Two-pass ontology encoding

struct OntologyEncodeOptions {
    Activation act = Activation::Sigmoid;
    bool self_in_pass1 = true;  // include the category node itself beside ch(c')
};

struct OntologyEncodeResult {
    Graph::Var leaf_outputs;          // n_leaves x out_dim
    std::vector<Graph::Var> pass1;    // per node: leaves = initial rows, internal = encoded vectors
};

// Pass 1 walks internal nodes child-before-parent, aggregating over children;
// pass 2 recomputes each leaf attending over itself and its full ancestor
// chain using the pass-1 vectors.
inline OntologyEncodeResult ontology_encode(Graph& g, const OntologyGraph& og, Graph::Var table,
                                            const GatVars& p, const OntologyEncodeOptions& opt = {}) {
    const Matrix& tv = g.value(table);
    if (tv.rows != og.n_nodes())
        throw shape_error("ontology_encode: table rows " + std::to_string(tv.rows) + " != node count " +
                          std::to_string(og.n_nodes()));
    if (p.dims.in_dim != p.dims.out_dim())
        throw shape_error("ontology_encode: two-pass attention needs out_dim == in_dim, got " +
                          std::to_string(p.dims.out_dim()) + " != " + std::to_string(p.dims.in_dim));

    OntologyEncodeResult res;
    res.pass1.resize(og.n_nodes());
    for (std::size_t i = 0; i < og.n_nodes(); ++i) res.pass1[i] = g.row_gather(table, {i});

    for (std::size_t node : og.bottom_up_internal_order()) {
        std::vector<Graph::Var> rows;
        if (opt.self_in_pass1) rows.push_back(res.pass1[node]);
        for (std::size_t c : og.ch(node)) rows.push_back(res.pass1[c]);
        if (rows.empty()) throw data_error("ontology_encode: internal node without children");
        Graph::Var center = g.row_gather(table, {node});
        Graph::Var neigh = g.concat_rows(std::span<const Graph::Var>(rows));
        res.pass1[node] = gat_node(g, p, center, neigh, opt.act).output;
    }

    std::vector<Graph::Var> leaf_rows;
    leaf_rows.reserve(og.n_leaves);
    for (std::size_t leaf = 0; leaf < og.n_leaves; ++leaf) {
        std::vector<Graph::Var> rows{res.pass1[leaf]};
        for (std::size_t a : og.pa(leaf)) rows.push_back(res.pass1[a]);
        Graph::Var center = g.row_gather(table, {leaf});
        Graph::Var neigh = g.concat_rows(std::span<const Graph::Var>(rows));
        leaf_rows.push_back(gat_node(g, p, center, neigh, opt.act).output);
    }
    res.leaf_outputs = g.concat_rows(std::span<const Graph::Var>(leaf_rows));
    return res;
}

// ---------------------------------------------------------------------------
// Weighted GCN

// S = D^-1/2 (A + I) D^-1/2 with D the augmented degree; symmetric, spectral
// radius at most 1 for symmetric nonnegative A.
inline Matrix gcn_normalizer(const Matrix& A) {
    if (A.rows != A.cols) throw shape_error("gcn_normalizer: adjacency must be square, got " + shape_str(A));
    const std::size_t n = A.rows;
    Matrix aug = A;
    for (std::size_t i = 0; i < n; ++i) aug(i, i) += 1.0;
    std::vector<double> dinv(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (aug(i, j) < 0.0) throw data_error("gcn_normalizer: negative adjacency weight");
            d += aug(i, j);
        }
        dinv[i] = 1.0 / std::sqrt(d);
    }
    Matrix s = Matrix::zeros(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (aug(i, j) != 0.0) s(i, j) = dinv[i] * aug(i, j) * dinv[j];
    return s;
}

// H = S X Theta, one propagation layer, linear.
inline Graph::Var wgcn_encode(Graph& g, Graph::Var normalizer, Graph::Var features, Graph::Var theta) {
    return g.matmul(g.matmul(normalizer, features), theta);
}

inline void init_gcn_params(ParamStore& store, const std::string& prefix, std::size_t in_dim, std::size_t out_dim,
                            Rng& rng) {
    double b = 1.0 / std::sqrt(static_cast<double>(in_dim));
    store.add(prefix + ".theta", Matrix::uniform(in_dim, out_dim, -b, b, rng));
}

// Symmetric 0/1 adjacency of the ontology's parent-child edges, for the
// convolutional option on the ontology graph.
inline Matrix ontology_adjacency(const OntologyGraph& og) {
    Matrix a = Matrix::zeros(og.n_nodes(), og.n_nodes());
    for (std::size_t node = 0; node < og.n_nodes(); ++node)
        for (std::size_t c : og.ch(node)) {
            a(node, c) = 1.0;
            a(c, node) = 1.0;
        }
    return a;
}

}  // namespace knowaug
