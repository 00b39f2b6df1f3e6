#pragma once

// Pipeline stages behind the CLI: synthetic generation, graph construction,
// the two contrastive pretraining stages, supervised training, evaluation,
// and the sweep/ablation/encoder-study harnesses. Stages hand artifacts to
// each other through fixed file names inside one working directory.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <tuple>
#include <vector>

#include "knowaug/config.hpp"
#include "knowaug/contrastive.hpp"
#include "knowaug/emr.hpp"
#include "knowaug/encoders.hpp"
#include "knowaug/errors.hpp"
#include "knowaug/metrics.hpp"
#include "knowaug/ontology.hpp"
#include "knowaug/predictor.hpp"
#include "knowaug/relation_graph.hpp"
#include "knowaug/serialize.hpp"

namespace knowaug {

struct RunConfig {
    // dims
    std::size_t d_onto = 128;
    std::size_t onto_heads = 4;
    std::size_t d_rel = 64;
    std::size_t d_rnn = 256;
    std::size_t d_e = 128;
    double leaky_slope = 0.01;
    std::string activation = "sigmoid";
    // training
    double lr = 5e-4;
    std::size_t pretrain_epochs = 40;
    std::size_t train_epochs = 40;
    std::uint64_t seed = 1;
    double threshold = 0.5;
    bool pooled_prauc = false;
    // relation graph
    double zeta = 0.07;
    // encoder choices (A = attention, C = convolution)
    std::string onto_encoder = "A";
    std::string rel_encoder = "C";

    static RunConfig from_config(const Config& cfg) {
        RunConfig r;
        r.d_onto = static_cast<std::size_t>(cfg.get_int_or("dims", "d_onto", 128));
        r.onto_heads = static_cast<std::size_t>(cfg.get_int_or("dims", "onto_heads", 4));
        r.d_rel = static_cast<std::size_t>(cfg.get_int_or("dims", "d_rel", 64));
        r.d_rnn = static_cast<std::size_t>(cfg.get_int_or("dims", "d_rnn", 256));
        r.d_e = static_cast<std::size_t>(cfg.get_int_or("dims", "d_e", 128));
        r.leaky_slope = cfg.get_double_or("dims", "leaky_slope", 0.01);
        r.activation = cfg.get_string_or("dims", "activation", "sigmoid");
        r.lr = cfg.get_double_or("train", "lr", 5e-4);
        r.pretrain_epochs = static_cast<std::size_t>(cfg.get_int_or("train", "pretrain_epochs", 40));
        r.train_epochs = static_cast<std::size_t>(cfg.get_int_or("train", "epochs", 40));
        r.seed = cfg.get_u64_or("train", "seed", 1);
        r.threshold = cfg.get_double_or("train", "threshold", 0.5);
        r.pooled_prauc = cfg.get_bool_or("train", "pooled_prauc", false);
        r.zeta = cfg.get_double_or("graph", "zeta", 0.07);
        r.onto_encoder = cfg.get_string_or("encoders", "ontology", "A");
        r.rel_encoder = cfg.get_string_or("encoders", "relation", "C");
        validate(r);
        return r;
    }

    static void validate(const RunConfig& r) {
        if (r.d_onto == 0 || r.d_rel == 0 || r.d_rnn == 0 || r.d_e == 0)
            throw config_error("run config: dimensions must be positive");
        if (r.onto_heads == 0 || r.d_onto % r.onto_heads != 0)
            throw config_error("run config: d_onto must be divisible by onto_heads");
        if (r.d_rel % r.onto_heads != 0)
            throw config_error("run config: d_rel must be divisible by onto_heads");
        parse_encoder_kind(r.onto_encoder);
        parse_encoder_kind(r.rel_encoder);
        parse_activation(r.activation);
    }

    Config to_config() const {
        Config c;
        c.set("dims", "d_onto", std::to_string(d_onto));
        c.set("dims", "onto_heads", std::to_string(onto_heads));
        c.set("dims", "d_rel", std::to_string(d_rel));
        c.set("dims", "d_rnn", std::to_string(d_rnn));
        c.set("dims", "d_e", std::to_string(d_e));
        c.set("dims", "leaky_slope", detail::fmt_full(leaky_slope));
        c.set("dims", "activation", activation);
        c.set("train", "lr", detail::fmt_full(lr));
        c.set("train", "pretrain_epochs", std::to_string(pretrain_epochs));
        c.set("train", "epochs", std::to_string(train_epochs));
        c.set("train", "seed", std::to_string(seed));
        c.set("train", "threshold", detail::fmt_full(threshold));
        c.set("train", "pooled_prauc", pooled_prauc ? "true" : "false");
        c.set("graph", "zeta", detail::fmt_full(zeta));
        c.set("encoders", "ontology", onto_encoder);
        c.set("encoders", "relation", rel_encoder);
        return c;
    }

    std::uint64_t hash() const { return to_config().hash(); }

    ContrastiveConfig contrastive(std::uint64_t stage_seed) const {
        ContrastiveConfig c;
        c.epochs = pretrain_epochs;
        c.lr = lr;
        c.seed = stage_seed;
        c.activation = parse_activation(activation);
        c.onto_dim = d_onto;
        c.onto_heads = onto_heads;
        c.leaky_slope = leaky_slope;
        c.rel_dim = d_rel;
        c.onto_encoder = parse_encoder_kind(onto_encoder);
        c.rel_encoder = parse_encoder_kind(rel_encoder);
        return c;
    }

    PredictorConfig predictor() const {
        PredictorConfig c;
        c.d_e = d_e;
        c.d_rnn = d_rnn;
        c.lr = lr;
        c.epochs = train_epochs;
        c.seed = seed ^ fnv1a("train");
        c.threshold = threshold;
        c.pooled_prauc = pooled_prauc;
        return c;
    }
};

namespace pipeline {

namespace fs = std::filesystem;

struct Workdir {
    fs::path dir;

    explicit Workdir(const std::string& d) : dir(d) { fs::create_directories(dir); }

    std::string records() const { return (dir / "records.jsonl").string(); }
    std::string dx_hierarchy() const { return (dir / "dx_hierarchy.tsv").string(); }
    std::string rx_hierarchy() const { return (dir / "rx_hierarchy.tsv").string(); }
    std::string rules() const { return (dir / "rules.tsv").string(); }
    std::string splits() const { return (dir / "splits.tsv").string(); }
    std::string codes() const { return (dir / "codes.tsv").string(); }
    std::string relation_edges() const { return (dir / "relation_edges.tsv").string(); }
    std::string onto_emb(CodeKind k) const {
        return (dir / (k == CodeKind::Diagnosis ? "onto_dx.emb" : "onto_rx.emb")).string();
    }
    std::string onto_loss(CodeKind k) const {
        return (dir / (k == CodeKind::Diagnosis ? "loss_onto_dx.tsv" : "loss_onto_rx.tsv")).string();
    }
    std::string rel_emb(Variant v = Variant::Full) const {
        if (v == Variant::RandomRelationInit) return (dir / "rel_r-.emb").string();
        if (v == Variant::BinaryRelationWeights) return (dir / "rel_rgw-.emb").string();
        return (dir / "rel.emb").string();
    }
    std::string rel_loss(Variant v = Variant::Full) const {
        if (v == Variant::RandomRelationInit) return (dir / "loss_rel_r-.tsv").string();
        if (v == Variant::BinaryRelationWeights) return (dir / "loss_rel_rgw-.tsv").string();
        return (dir / "loss_rel.tsv").string();
    }
    std::string checkpoint(Variant v = Variant::Full) const {
        if (v == Variant::Full) return (dir / "checkpoint.bin").string();
        return (dir / (std::string("checkpoint_") + variant_name(v) + ".bin")).string();
    }
    std::string metrics(Variant v = Variant::Full) const {
        if (v == Variant::Full) return (dir / "metrics.tsv").string();
        return (dir / (std::string("metrics_") + variant_name(v) + ".tsv")).string();
    }
    std::string manifest(const std::string& stage) const {
        return (dir / ("manifest_" + stage + ".json")).string();
    }
    std::string file(const std::string& name) const { return (dir / name).string(); }
};

inline void require_file(const std::string& path, const std::string& producer) {
    if (!fs::exists(path))
        throw config_error("missing artifact " + path + "; produce it with `" + producer + "`");
}

// ---------------------------------------------------------------------------
// gen-synthetic

inline Cohort gen_synthetic(const std::string& spec_path, const Workdir& out) {
    Config spec_cfg = Config::parse_file(spec_path);
    SyntheticSpec spec = load_synthetic_spec(spec_cfg);
    Cohort cohort = generate_synthetic(spec);
    write_records(cohort, out.records());
    write_synthetic_hierarchy(out.dx_hierarchy(), CodeKind::Diagnosis, spec.dx_vocab, spec.group_size);
    write_synthetic_hierarchy(out.rx_hierarchy(), CodeKind::Medication, spec.rx_vocab, spec.group_size);
    write_rules(spec, out.rules());
    write_manifest("gen-synthetic", spec_cfg.hash(), spec.seed, {spec_path},
                   {out.records(), out.dx_hierarchy(), out.rx_hierarchy(), out.rules()},
                   out.manifest("gen-synthetic"));
    return cohort;
}

// ---------------------------------------------------------------------------
// build-graphs: split, co-occurrence counts on leakage-safe visits, edges

inline RelationGraph build_relation_graph(const Cohort& cohort, const DatasetSplit& split, double zeta,
                                          std::vector<std::string>* warnings = nullptr) {
    auto visit_sets = graph_visit_sets(cohort, split.train);
    CooccurrenceStats stats = count_cooccurrence(visit_sets, cohort.n_codes());
    return build_adjacency(stats, zeta, warnings);
}

inline void build_graphs(const std::string& records_path, const RunConfig& run, const Workdir& out) {
    require_file(records_path, "knowaug gen-synthetic");
    Cohort cohort = load_records(records_path);
    DatasetSplit split = split_dataset(cohort.multi_visit.size(), run.seed ^ fnv1a("split"));
    write_splits(cohort, split, out.splits());
    write_code_manifest(cohort, out.codes());
    std::vector<std::string> warnings;
    RelationGraph rg = build_relation_graph(cohort, split, run.zeta, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    export_edges(rg, out.relation_edges());
    write_manifest("build-graphs", run.hash(), run.seed, {records_path},
                   {out.splits(), out.codes(), out.relation_edges()}, out.manifest("build-graphs"));
}

// ---------------------------------------------------------------------------
// pretrain-onto: one contrastive run per ontology graph

struct OntologyPretrainOutcome {
    ContrastiveResult dx;
    ContrastiveResult rx;
};

inline OntologyPretrainOutcome pretrain_onto_in_memory(const Cohort& cohort, const std::string& dx_hierarchy,
                                                       const std::string& rx_hierarchy, const RunConfig& run) {
    OntologyGraph dx_graph = build_ontology_graph(cohort.dx_vocab, dx_hierarchy, CodeKind::Diagnosis);
    OntologyGraph rx_graph = build_ontology_graph(cohort.rx_vocab, rx_hierarchy, CodeKind::Medication);
    OntologyPretrainOutcome o;
    o.dx = train_ontology_embeddings(dx_graph, run.contrastive(run.seed ^ fnv1a("onto_dx")));
    o.rx = train_ontology_embeddings(rx_graph, run.contrastive(run.seed ^ fnv1a("onto_rx")));
    return o;
}

inline void pretrain_onto(const std::string& records_path, const std::string& dx_hierarchy,
                          const std::string& rx_hierarchy, const RunConfig& run, const Workdir& out) {
    require_file(records_path, "knowaug gen-synthetic");
    require_file(dx_hierarchy, "knowaug gen-synthetic");
    require_file(rx_hierarchy, "knowaug gen-synthetic");
    Cohort cohort = load_records(records_path);
    OntologyPretrainOutcome o = pretrain_onto_in_memory(cohort, dx_hierarchy, rx_hierarchy, run);
    save_embeddings(o.dx.embeddings, out.onto_emb(CodeKind::Diagnosis));
    save_embeddings(o.rx.embeddings, out.onto_emb(CodeKind::Medication));
    write_loss_log(o.dx.objective_per_epoch, out.onto_loss(CodeKind::Diagnosis));
    write_loss_log(o.rx.objective_per_epoch, out.onto_loss(CodeKind::Medication));
    write_manifest("pretrain-onto", run.hash(), run.seed, {records_path, dx_hierarchy, rx_hierarchy},
                   {out.onto_emb(CodeKind::Diagnosis), out.onto_emb(CodeKind::Medication)},
                   out.manifest("pretrain-onto"));
}

// ---------------------------------------------------------------------------
// pretrain-rel: cascade O into the relation encoder (or variant inits)

inline Matrix joint_initial_features(const Matrix& o_dx, const Matrix& o_rx) {
    if (o_dx.cols != o_rx.cols) throw data_error("pretrain-rel: ontology embedding widths differ");
    Matrix x(o_dx.rows + o_rx.rows, o_dx.cols, 0.0);
    for (std::size_t i = 0; i < o_dx.rows; ++i)
        for (std::size_t j = 0; j < o_dx.cols; ++j) x(i, j) = o_dx(i, j);
    for (std::size_t i = 0; i < o_rx.rows; ++i)
        for (std::size_t j = 0; j < o_rx.cols; ++j) x(o_dx.rows + i, j) = o_rx(i, j);
    return x;
}

inline ContrastiveResult pretrain_rel_in_memory(const RelationGraph& rg_in, const Matrix& o_dx,
                                                const Matrix& o_rx, const RunConfig& run, Variant variant) {
    RelationGraph rg = rg_in;
    if (variant == Variant::BinaryRelationWeights) {
        for (double& v : rg.adjacency.data) v = v > 0.0 ? 1.0 : 0.0;
    }
    Matrix x;
    if (variant == Variant::RandomRelationInit) {
        Rng rng(run.seed ^ fnv1a("rel_random_init"));
        x = init_embedding_table(rg.n_codes, run.d_onto, rng);
    } else {
        x = joint_initial_features(o_dx, o_rx);
    }
    return train_relation_embeddings(rg, x, run.contrastive(run.seed ^ fnv1a("rel")));
}

inline void pretrain_rel(const std::string& records_path, const RunConfig& run, const Workdir& out,
                         Variant variant = Variant::Full) {
    require_file(out.relation_edges(), "knowaug build-graphs");
    Cohort cohort = load_records(records_path);
    RelationGraph rg = import_edges(out.relation_edges());
    if (rg.n_codes != cohort.n_codes())
        throw data_error("pretrain-rel: edge file covers " + std::to_string(rg.n_codes) + " codes, records have " +
                         std::to_string(cohort.n_codes()));
    Matrix o_dx, o_rx;
    if (variant != Variant::RandomRelationInit) {
        NodeEmbeddings dx = load_embeddings(out.onto_emb(CodeKind::Diagnosis), "knowaug pretrain-onto");
        NodeEmbeddings rx = load_embeddings(out.onto_emb(CodeKind::Medication), "knowaug pretrain-onto");
        o_dx = dx.rows;
        o_rx = rx.rows;
        if (o_dx.rows != cohort.n_dx() || o_rx.rows != cohort.n_rx())
            throw data_error("pretrain-rel: ontology embeddings do not cover the vocabularies");
    }
    ContrastiveResult res = pretrain_rel_in_memory(rg, o_dx, o_rx, run, variant);
    save_embeddings(res.embeddings, out.rel_emb(variant));
    write_loss_log(res.objective_per_epoch, out.rel_loss(variant));
    write_manifest("pretrain-rel", run.hash(), run.seed, {records_path, out.relation_edges()},
                   {out.rel_emb(variant)}, out.manifest("pretrain-rel"));
}

// ---------------------------------------------------------------------------
// train / evaluate

inline FusionTables assemble_tables(const Matrix& o_dx, const Matrix& o_rx, const Matrix& h, Variant variant) {
    FusionTables t;
    t.use_o = !(variant == Variant::NoOntology || variant == Variant::NoPretraining);
    t.use_h = !(variant == Variant::NoRelation || variant == Variant::NoPretraining);
    if (t.use_o) {
        t.o_dx = o_dx;
        t.o_rx = o_rx;
    }
    if (t.use_h) t.h = h;
    return t;
}

inline FusionTables load_tables(const Cohort& cohort, const Workdir& wd, Variant variant) {
    Matrix o_dx, o_rx, h;
    bool need_o = !(variant == Variant::NoOntology || variant == Variant::NoPretraining);
    bool need_h = !(variant == Variant::NoRelation || variant == Variant::NoPretraining);
    if (need_o) {
        o_dx = load_embeddings(wd.onto_emb(CodeKind::Diagnosis), "knowaug pretrain-onto").rows;
        o_rx = load_embeddings(wd.onto_emb(CodeKind::Medication), "knowaug pretrain-onto").rows;
    }
    if (need_h) {
        Variant rel_variant = (variant == Variant::RandomRelationInit || variant == Variant::BinaryRelationWeights)
                                  ? variant
                                  : Variant::Full;
        h = load_embeddings(wd.rel_emb(rel_variant), "knowaug pretrain-rel").rows;
        if (h.rows != cohort.n_codes()) throw data_error("train: relation embeddings do not cover the code space");
    }
    return assemble_tables(o_dx, o_rx, h, variant);
}

inline TrainResult train_stage(const std::string& records_path, const RunConfig& run, const Workdir& out,
                               Variant variant = Variant::Full) {
    Cohort cohort = load_records(records_path);
    require_file(out.splits(), "knowaug build-graphs");
    DatasetSplit split = load_splits(cohort, out.splits(), "knowaug build-graphs");
    FusionTables tables = load_tables(cohort, out, variant);
    TrainResult res = train_predictor(cohort, split, tables, run.predictor());
    save_checkpoint(res.best_params, run.hash(), out.checkpoint(variant));
    write_metrics_log(res.log, out.metrics(variant));
    write_manifest("train", run.hash(), run.seed, {records_path, out.splits()},
                   {out.checkpoint(variant), out.metrics(variant)}, out.manifest("train"));
    return res;
}

inline MetricRow evaluate_stage(const std::string& records_path, const RunConfig& run, const Workdir& wd,
                                const std::string& split_name, Variant variant = Variant::Full) {
    Cohort cohort = load_records(records_path);
    require_file(wd.splits(), "knowaug build-graphs");
    DatasetSplit split = load_splits(cohort, wd.splits(), "knowaug build-graphs");
    const std::vector<std::size_t>* indices = nullptr;
    if (split_name == "train") indices = &split.train;
    else if (split_name == "validation") indices = &split.validation;
    else if (split_name == "test") indices = &split.test;
    else throw config_error("evaluate: unknown split " + split_name);
    FusionTables tables = load_tables(cohort, wd, variant);
    Checkpoint ck = load_checkpoint(wd.checkpoint(variant), "knowaug train");
    PredictorModel model(cohort.n_dx(), cohort.n_rx(), tables, run.predictor());
    auto records = evaluate_split(model, cohort, *indices, tables, ck.params);
    return compute_metrics(records, run.pooled_prauc);
}

// ---------------------------------------------------------------------------
// Harnesses

// Full in-memory pipeline for one variant on already-built artifacts.
inline MetricRow run_variant(const Cohort& cohort, const DatasetSplit& split,
                             const OntologyPretrainOutcome& onto, const RelationGraph& rg,
                             const RunConfig& run, Variant variant) {
    Matrix h;
    bool need_h = !(variant == Variant::NoRelation || variant == Variant::NoPretraining);
    if (need_h)
        h = pretrain_rel_in_memory(rg, onto.dx.embeddings.rows, onto.rx.embeddings.rows, run, variant)
                .embeddings.rows;
    FusionTables tables = assemble_tables(onto.dx.embeddings.rows, onto.rx.embeddings.rows, h, variant);
    return train_predictor(cohort, split, tables, run.predictor()).test;
}

inline MetricRow ablate(const std::string& records_path, const std::string& dx_hierarchy,
                        const std::string& rx_hierarchy, const RunConfig& run, const Workdir& out,
                        Variant variant) {
    Cohort cohort = load_records(records_path);
    require_file(out.splits(), "knowaug build-graphs");
    DatasetSplit split = load_splits(cohort, out.splits(), "knowaug build-graphs");
    OntologyPretrainOutcome onto;
    if (variant != Variant::NoPretraining) {
        // HG- still needs O to cascade into the relation encoder.
        onto = pretrain_onto_in_memory(cohort, dx_hierarchy, rx_hierarchy, run);
    }
    RelationGraph rg = build_relation_graph(cohort, split, run.zeta);
    MetricRow row = run_variant(cohort, split, onto, rg, run, variant);
    std::ofstream f(out.file(std::string("ablation_") + variant_name(variant) + ".tsv"));
    f << "variant\tjaccard\tf1\tprauc\n";
    f << variant_name(variant) << '\t' << detail::fmt_full(row.jaccard) << '\t' << detail::fmt_full(row.f1)
      << '\t' << detail::fmt_full(row.prauc) << '\n';
    return row;
}

inline std::vector<double> default_zeta_grid() {
    return {0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10};
}

inline std::vector<std::pair<double, MetricRow>> sweep_zeta(const std::string& records_path,
                                                            const RunConfig& run, const Workdir& out,
                                                            const std::vector<double>& grid) {
    Cohort cohort = load_records(records_path);
    require_file(out.splits(), "knowaug build-graphs");
    DatasetSplit split = load_splits(cohort, out.splits(), "knowaug build-graphs");
    Matrix o_dx = load_embeddings(out.onto_emb(CodeKind::Diagnosis), "knowaug pretrain-onto").rows;
    Matrix o_rx = load_embeddings(out.onto_emb(CodeKind::Medication), "knowaug pretrain-onto").rows;

    auto visit_sets = graph_visit_sets(cohort, split.train);
    CooccurrenceStats stats = count_cooccurrence(visit_sets, cohort.n_codes());

    std::vector<std::pair<double, MetricRow>> rows;
    std::ofstream f(out.file("sweep_zeta.tsv"));
    if (!f) throw config_error("cannot open sweep output");
    f << "zeta\tjaccard\tf1\tprauc\n";
    for (double zeta : grid) {
        RunConfig point = run;
        point.zeta = zeta;
        RelationGraph rg = build_adjacency(stats, zeta);
        Matrix h = pretrain_rel_in_memory(rg, o_dx, o_rx, point, Variant::Full).embeddings.rows;
        FusionTables tables = assemble_tables(o_dx, o_rx, h, Variant::Full);
        MetricRow row = train_predictor(cohort, split, tables, point.predictor()).test;
        rows.emplace_back(zeta, row);
        f << detail::fmt_full(zeta) << '\t' << detail::fmt_full(row.jaccard) << '\t' << detail::fmt_full(row.f1)
          << '\t' << detail::fmt_full(row.prauc) << '\n';
    }
    return rows;
}

// The 2x2 encoder grid: pairs (ontology encoder, relation encoder).
inline std::vector<std::pair<std::string, MetricRow>> encoder_study(const std::string& records_path,
                                                                    const std::string& dx_hierarchy,
                                                                    const std::string& rx_hierarchy,
                                                                    const RunConfig& run, const Workdir& out) {
    Cohort cohort = load_records(records_path);
    require_file(out.splits(), "knowaug build-graphs");
    DatasetSplit split = load_splits(cohort, out.splits(), "knowaug build-graphs");
    RelationGraph rg = build_relation_graph(cohort, split, run.zeta);

    std::vector<std::pair<std::string, MetricRow>> rows;
    std::ofstream f(out.file("encoder_study.tsv"));
    if (!f) throw config_error("cannot open encoder study output");
    f << "combo\tjaccard\tf1\tprauc\n";
    for (const char* combo : {"AC", "AA", "CC", "CA"}) {
        RunConfig point = run;
        point.onto_encoder = std::string(1, combo[0]);
        point.rel_encoder = std::string(1, combo[1]);
        OntologyPretrainOutcome onto = pretrain_onto_in_memory(cohort, dx_hierarchy, rx_hierarchy, point);
        MetricRow row = run_variant(cohort, split, onto, rg, point, Variant::Full);
        rows.emplace_back(combo, row);
        f << combo << '\t' << detail::fmt_full(row.jaccard) << '\t' << detail::fmt_full(row.f1) << '\t'
          << detail::fmt_full(row.prauc) << '\n';
    }
    return rows;
}

}  // namespace pipeline
}  // namespace knowaug
