#pragma once

// Contrastive pretraining in the Deep Graph Infomax style, run twice: over
// each ontology graph with the attention encoder, and over the relation graph
// with the weighted GCN. Negatives come from row-permuting node features
// while keeping the topology.

#include <cstdint>
#include <string>
#include <vector>

#include "knowaug/adam.hpp"
#include "knowaug/binding.hpp"
#include "knowaug/encoders.hpp"
#include "knowaug/errors.hpp"
#include "knowaug/graph.hpp"
#include "knowaug/matrix.hpp"
#include "knowaug/ontology.hpp"
#include "knowaug/relation_graph.hpp"
#include "knowaug/rng.hpp"

namespace knowaug {

struct CorruptionPlan {
    std::vector<std::size_t> perm;  // output row i reads input row perm[i]
    std::uint64_t seed = 0;
};

// Resamples until the permutation moves at least one row (node count > 1).
inline CorruptionPlan make_corruption_plan(std::size_t n, Rng& rng, std::uint64_t seed_label = 0) {
    if (n == 0) throw contract_error("corruption: empty graph");
    CorruptionPlan plan;
    plan.seed = seed_label;
    plan.perm = rng.permutation(n);
    while (n > 1) {
        bool identity = true;
        for (std::size_t i = 0; i < n; ++i)
            if (plan.perm[i] != i) {
                identity = false;
                break;
            }
        if (!identity) break;
        plan.perm = rng.permutation(n);
    }
    return plan;
}

inline Matrix corrupt(const Matrix& features, const CorruptionPlan& plan) {
    if (plan.perm.size() != features.rows)
        throw contract_error("corruption: plan length " + std::to_string(plan.perm.size()) +
                             " != node count " + std::to_string(features.rows));
    Matrix out(features.rows, features.cols, 0.0);
    for (std::size_t i = 0; i < features.rows; ++i)
        for (std::size_t j = 0; j < features.cols; ++j) out(i, j) = features(plan.perm[i], j);
    return out;
}

inline Graph::Var corrupt(Graph& g, Graph::Var features, const CorruptionPlan& plan) {
    if (plan.perm.size() != g.value(features).rows)
        throw contract_error("corruption: plan length mismatch");
    return g.row_gather(features, plan.perm);
}

// Graph-level readout: arithmetic mean over node rows.
inline Graph::Var readout(Graph& g, Graph::Var node_embeddings) { return g.mean_over_rows(node_embeddings); }

inline void init_discriminator(ParamStore& store, const std::string& name, std::size_t d, Rng& rng) {
    double b = 1.0 / std::sqrt(static_cast<double>(d));
    store.add(name, Matrix::uniform(d, d, -b, b, rng));
}

// sigma(z W_D o) per node row: nodes (n x d), z (1 x d) -> scores (n x 1).
inline Graph::Var discriminate(Graph& g, Graph::Var wd, Graph::Var nodes, Graph::Var z) {
    const Matrix& W = g.value(wd);
    const Matrix& N = g.value(nodes);
    const Matrix& Z = g.value(z);
    if (W.rows != W.cols || N.cols != W.rows || Z.rows != 1 || Z.cols != W.rows)
        throw shape_error("discriminate: incompatible shapes nodes " + shape_str(N) + ", W " + shape_str(W) +
                          ", summary " + shape_str(Z));
    return g.sigmoid(g.matmul(g.matmul(nodes, wd), g.transpose_(z)));
}

// mean log D(pos) + mean log(1 - D(neg)), scores clamped away from {0,1}.
// This is the maximized objective; train on its negation.
inline Graph::Var dgi_objective(Graph& g, Graph::Var pos_scores, Graph::Var neg_scores) {
    constexpr double eps = 1e-12;
    if (g.value(pos_scores).size() == 0 || g.value(neg_scores).size() == 0)
        throw contract_error("dgi_objective: empty score list");
    Graph::Var pos = g.mean_all(g.log_(g.clamp(pos_scores, eps, 1.0 - eps)));
    Graph::Var one_minus = g.scale(g.add_const(neg_scores, -1.0), -1.0);
    Graph::Var neg = g.mean_all(g.log_(g.clamp(one_minus, eps, 1.0 - eps)));
    return g.add(pos, neg);
}

inline double dgi_objective_value(const std::vector<double>& pos, const std::vector<double>& neg) {
    Matrix pm(pos.size(), 1, 0.0), qm(neg.size(), 1, 0.0);
    for (std::size_t i = 0; i < pos.size(); ++i) pm(i, 0) = pos[i];
    for (std::size_t i = 0; i < neg.size(); ++i) qm(i, 0) = neg[i];
    Graph g;
    return g.value(dgi_objective(g, g.leaf(std::move(pm)), g.leaf(std::move(qm))))(0, 0);
}

// Fraction of held-out positive scores above 0.5 plus negatives below 0.5.
inline double discriminator_accuracy(const std::vector<double>& pos, const std::vector<double>& neg) {
    if (pos.empty() && neg.empty()) throw contract_error("discriminator_accuracy: no scores");
    std::size_t hit = 0;
    for (double s : pos)
        if (s > 0.5) ++hit;
    for (double s : neg)
        if (s < 0.5) ++hit;
    return static_cast<double>(hit) / static_cast<double>(pos.size() + neg.size());
}

struct ContrastiveConfig {
    std::size_t epochs = 40;
    double lr = 5e-4;
    std::uint64_t seed = 0;
    Activation activation = Activation::Sigmoid;
    bool train_initial_table = true;  // ontology runs: update W_e jointly
    bool self_in_pass1 = true;
    // Ontology encoder dims (square attention d = heads * head_dim).
    std::size_t onto_dim = 128;
    std::size_t onto_heads = 4;
    double leaky_slope = 0.01;
    // Relation encoder output width.
    std::size_t rel_dim = 64;
    EncoderKind onto_encoder = EncoderKind::Attention;
    EncoderKind rel_encoder = EncoderKind::Convolution;
};

struct ContrastiveResult {
    NodeEmbeddings embeddings;            // ontology: leaf rows; relation: all codes
    std::vector<double> objective_per_epoch;
    ParamStore params;                    // trained encoder + discriminator (+ table when trainable)
    double heldout_accuracy = 0.0;        // discriminator accuracy on a fresh corruption
};

namespace detail {

template <typename EncodeFn>
ContrastiveResult run_dgi(std::size_t n_feature_rows, std::size_t out_dim, ParamStore&& init_params,
                          const ContrastiveConfig& cfg, const std::string& table_name, bool table_trainable,
                          EncodeFn&& encode) {
    // encode(Graph&, BoundParams&, Graph::Var features) -> node embeddings Var
    ContrastiveResult res;
    res.params = std::move(init_params);
    Rng rng(cfg.seed + 0x9e3779b97f4a7c15ull);  // corruption stream, decoupled from init
    AdamOptimizer opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        try {
            Graph g;
            BoundParams bp(g, res.params);
            Graph::Var features = table_trainable ? bp.bind(table_name)
                                                  : g.leaf(res.params.get(table_name));
            CorruptionPlan plan = make_corruption_plan(n_feature_rows, rng, cfg.seed);
            Graph::Var corrupted = corrupt(g, features, plan);
            Graph::Var wd = bp.bind("disc.W");
            Graph::Var pos = encode(g, bp, features);
            Graph::Var neg = encode(g, bp, corrupted);
            Graph::Var z = readout(g, pos);
            Graph::Var pos_scores = discriminate(g, wd, pos, z);
            Graph::Var neg_scores = discriminate(g, wd, neg, z);
            Graph::Var objective = dgi_objective(g, pos_scores, neg_scores);
            res.objective_per_epoch.push_back(g.value(objective)(0, 0));
            Graph::Var loss = g.scale(objective, -1.0);
            g.backward(loss);
            opt.apply(bp.grads());
        } catch (const numeric_error& e) {
            throw numeric_error("contrastive epoch " + std::to_string(epoch) + ": " + e.what());
        }
    }

    // Final embeddings and held-out discriminator accuracy on a fresh plan.
    Graph g;
    BoundParams bp(g, res.params);
    Graph::Var features = g.leaf(res.params.get(table_name));
    Graph::Var pos = encode(g, bp, features);
    CorruptionPlan plan = make_corruption_plan(n_feature_rows, rng, cfg.seed);
    Graph::Var neg = encode(g, bp, corrupt(g, features, plan));
    Graph::Var wd = g.leaf(res.params.get("disc.W"));
    Graph::Var z = readout(g, pos);
    const Matrix& ps = g.value(discriminate(g, wd, pos, z));
    const Matrix& ns = g.value(discriminate(g, wd, neg, z));
    res.heldout_accuracy = discriminator_accuracy(ps.data, ns.data);
    res.embeddings.rows = g.value(pos);
    if (res.embeddings.rows.cols != out_dim)
        throw shape_error("contrastive: encoder output width " + std::to_string(res.embeddings.rows.cols) +
                          " != configured " + std::to_string(out_dim));
    return res;
}

}  // namespace detail

// Ontology pretraining: node features are the W_e table over all ontology
// nodes; positives/negatives are the encoded leaf outputs. Returns leaf
// embeddings O aligned with the vocabulary.
inline ContrastiveResult train_ontology_embeddings(const OntologyGraph& og, const ContrastiveConfig& cfg) {
    Rng init_rng(cfg.seed);
    ParamStore params;
    params.add("table", init_embedding_table(og.n_nodes(), cfg.onto_dim, init_rng));
    GatDims dims;
    Matrix gcn_norm;
    if (cfg.onto_encoder == EncoderKind::Attention) {
        dims = square_gat_dims(cfg.onto_dim, cfg.onto_heads, cfg.leaky_slope);
        init_gat_params(params, "onto", dims, init_rng);
    } else {
        init_gcn_params(params, "onto", cfg.onto_dim, cfg.onto_dim, init_rng);
        gcn_norm = gcn_normalizer(ontology_adjacency(og));
    }
    init_discriminator(params, "disc.W", cfg.onto_dim, init_rng);

    OntologyEncodeOptions opt{cfg.activation, cfg.self_in_pass1};
    std::vector<std::size_t> leaf_rows(og.n_leaves);
    for (std::size_t i = 0; i < og.n_leaves; ++i) leaf_rows[i] = i;

    auto encode = [&](Graph& g, BoundParams& bp, Graph::Var features) -> Graph::Var {
        if (cfg.onto_encoder == EncoderKind::Attention) {
            GatVars gat = bind_gat(bp, "onto", dims);
            return ontology_encode(g, og, features, gat, opt).leaf_outputs;
        }
        Graph::Var norm = g.leaf(gcn_norm);
        Graph::Var theta = bp.bind("onto.theta");
        return g.row_gather(wgcn_encode(g, norm, features, theta), leaf_rows);
    };

    ContrastiveResult res = detail::run_dgi(og.n_nodes(), cfg.onto_dim, std::move(params), cfg, "table",
                                            cfg.train_initial_table, encode);
    res.embeddings.source = EmbeddingSource::OntologyAugmented;
    return res;
}

// Relation pretraining: node features X are fixed inputs (ontology-augmented
// rows, or a random table for the R- variant); only the encoder and
// discriminator train. Returns embeddings H for all codes.
inline ContrastiveResult train_relation_embeddings(const RelationGraph& rg, const Matrix& initial_features,
                                                   const ContrastiveConfig& cfg) {
    if (initial_features.rows != rg.n_codes)
        throw data_error("relation pretraining: feature rows " + std::to_string(initial_features.rows) +
                         " do not cover " + std::to_string(rg.n_codes) + " codes");
    Rng init_rng(cfg.seed);
    ParamStore params;
    params.add("table", initial_features);
    GatDims dims;
    Matrix gcn_norm;
    if (cfg.rel_encoder == EncoderKind::Convolution) {
        init_gcn_params(params, "rel", initial_features.cols, cfg.rel_dim, init_rng);
        gcn_norm = gcn_normalizer(rg.adjacency);
    } else {
        if (cfg.rel_dim % cfg.onto_heads != 0)
            throw config_error("relation gat: rel_dim not divisible by head count");
        dims = GatDims{initial_features.cols, cfg.rel_dim / cfg.onto_heads, cfg.onto_heads, cfg.leaky_slope};
        init_gat_params(params, "rel", dims, init_rng);
    }
    init_discriminator(params, "disc.W", cfg.rel_dim, init_rng);

    std::vector<std::vector<std::size_t>> neighborhoods;
    if (cfg.rel_encoder == EncoderKind::Attention) neighborhoods = rg.neighborhoods_with_self();

    auto encode = [&](Graph& g, BoundParams& bp, Graph::Var features) -> Graph::Var {
        if (cfg.rel_encoder == EncoderKind::Convolution) {
            Graph::Var norm = g.leaf(gcn_norm);
            Graph::Var theta = bp.bind("rel.theta");
            return wgcn_encode(g, norm, features, theta);
        }
        GatVars gat = bind_gat(bp, "rel", dims);
        return gat_encode(g, gat, features, neighborhoods, cfg.activation);
    };

    ContrastiveResult res =
        detail::run_dgi(rg.n_codes, cfg.rel_dim, std::move(params), cfg, "table", false, encode);
    res.embeddings.source = EmbeddingSource::RelationAugmented;
    return res;
}

}  // namespace knowaug
