#pragma once

// Supervised sequential medication prediction: per-visit fusion of the
// ontology-augmented (O), relation-augmented (H), and supervised-learnable
// (E) code embeddings, a medication-history GRU channel and a diagnosis GRU
// channel, and a sigmoid multi-label output head trained with BCE.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "knowaug/adam.hpp"
#include "knowaug/binding.hpp"
#include "knowaug/emr.hpp"
#include "knowaug/errors.hpp"
#include "knowaug/graph.hpp"
#include "knowaug/matrix.hpp"
#include "knowaug/metrics.hpp"
#include "knowaug/rng.hpp"

namespace knowaug {

enum class Variant {
    Full,
    NoRelation,             // RG-: drop H from fusion
    NoOntology,             // HG-: drop O from fusion
    NoPretraining,          // HGRG-: drop both, E only
    RandomRelationInit,     // R-: relation pretraining starts from random features
    BinaryRelationWeights,  // RGW-: binarize adjacency before normalization
};

inline Variant parse_variant(const std::string& s) {
    if (s == "full") return Variant::Full;
    if (s == "rg-") return Variant::NoRelation;
    if (s == "hg-") return Variant::NoOntology;
    if (s == "hgrg-") return Variant::NoPretraining;
    if (s == "r-") return Variant::RandomRelationInit;
    if (s == "rgw-") return Variant::BinaryRelationWeights;
    throw config_error("unknown variant: " + s + " (expected full, rg-, hg-, hgrg-, r-, rgw-)");
}

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::NoRelation: return "rg-";
        case Variant::NoOntology: return "hg-";
        case Variant::NoPretraining: return "hgrg-";
        case Variant::RandomRelationInit: return "r-";
        case Variant::BinaryRelationWeights: return "rgw-";
    }
    return "full";
}

// Frozen pretrained tables. O is per kind; H covers the joint code space
// (diagnoses first, then medications).
struct FusionTables {
    Matrix o_dx;  // |C_d| x d_onto
    Matrix o_rx;  // |C_m| x d_onto
    Matrix h;     // |C| x d_rel
    bool use_o = true;
    bool use_h = true;
};

struct PredictorConfig {
    std::size_t d_e = 128;    // trainable embedding width
    std::size_t d_rnn = 256;  // GRU hidden width and patient representation width
    double lr = 5e-4;
    std::size_t epochs = 40;
    std::uint64_t seed = 0;
    double threshold = 0.5;
    bool pooled_prauc = false;
};

namespace detail {

inline Matrix mean_rows(const Matrix& table, const std::vector<std::size_t>& idx) {
    Matrix out(1, table.cols, 0.0);
    if (idx.empty()) return out;
    for (auto i : idx) {
        if (i >= table.rows)
            throw data_error("fusion: code index " + std::to_string(i) + " has no embedding row");
        for (std::size_t j = 0; j < table.cols; ++j) out(0, j) += table(i, j);
    }
    for (double& v : out.data) v /= static_cast<double>(idx.size());
    return out;
}

}  // namespace detail

// Precomputed frozen per-visit mean rows for one patient.
struct VisitFeatureCache {
    std::vector<Matrix> o_dx, o_rx;  // per visit, 1 x d_onto (absent sources stay empty)
    std::vector<Matrix> h_dx, h_rx;  // per visit, 1 x d_rel
};

inline VisitFeatureCache build_visit_features(const PatientRecord& p, const FusionTables& t, std::size_t n_dx) {
    VisitFeatureCache c;
    for (const auto& v : p.visits) {
        if (t.use_o) {
            c.o_dx.push_back(detail::mean_rows(t.o_dx, v.dx));
            c.o_rx.push_back(detail::mean_rows(t.o_rx, v.rx));
        }
        if (t.use_h) {
            std::vector<std::size_t> rx_joint;
            rx_joint.reserve(v.rx.size());
            for (auto m : v.rx) rx_joint.push_back(n_dx + m);
            c.h_dx.push_back(detail::mean_rows(t.h, v.dx));
            c.h_rx.push_back(detail::mean_rows(t.h, rx_joint));
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// GRU channel

struct GruVars {
    Graph::Var Wz, Wr, Wh;  // in x hidden
    Graph::Var Uz, Ur, Uh;  // hidden x hidden
    Graph::Var bz, br, bh;  // 1 x hidden
};

inline void init_gru_params(ParamStore& store, const std::string& prefix, std::size_t in_dim,
                            std::size_t hidden, Rng& rng) {
    double wb = 1.0 / std::sqrt(static_cast<double>(in_dim));
    double ub = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (const char* gate : {"z", "r", "h"}) {
        store.add(prefix + ".W" + gate, Matrix::uniform(in_dim, hidden, -wb, wb, rng));
        store.add(prefix + ".U" + gate, Matrix::uniform(hidden, hidden, -ub, ub, rng));
        store.add(prefix + ".b" + gate, Matrix::zeros(1, hidden));
    }
}

inline GruVars bind_gru(BoundParams& bp, const std::string& prefix) {
    GruVars v;
    v.Wz = bp.bind(prefix + ".Wz");
    v.Wr = bp.bind(prefix + ".Wr");
    v.Wh = bp.bind(prefix + ".Wh");
    v.Uz = bp.bind(prefix + ".Uz");
    v.Ur = bp.bind(prefix + ".Ur");
    v.Uh = bp.bind(prefix + ".Uh");
    v.bz = bp.bind(prefix + ".bz");
    v.br = bp.bind(prefix + ".br");
    v.bh = bp.bind(prefix + ".bh");
    return v;
}

// z = sig(xWz + hUz + bz); r = sig(xWr + hUr + br);
// hcand = tanh(xWh + (r*h)Uh + bh); h' = (1-z)*h + z*hcand.
inline Graph::Var gru_step(Graph& g, const GruVars& v, Graph::Var x, Graph::Var h) {
    Graph::Var z = g.sigmoid(g.add(g.add(g.matmul(x, v.Wz), g.matmul(h, v.Uz)), v.bz));
    Graph::Var r = g.sigmoid(g.add(g.add(g.matmul(x, v.Wr), g.matmul(h, v.Ur)), v.br));
    Graph::Var cand = g.tanh_(g.add(g.add(g.matmul(x, v.Wh), g.matmul(g.hadamard(r, h), v.Uh)), v.bh));
    Graph::Var keep = g.hadamard(g.scale(g.add_const(z, -1.0), -1.0), h);
    return g.add(keep, g.hadamard(z, cand));
}

// ---------------------------------------------------------------------------
// Model

class PredictorModel {
public:
    PredictorModel(std::size_t n_dx, std::size_t n_rx, const FusionTables& tables, PredictorConfig cfg)
        : n_dx_(n_dx), n_rx_(n_rx), cfg_(cfg), use_o_(tables.use_o), use_h_(tables.use_h) {
        d_onto_ = tables.use_o ? tables.o_dx.cols : 0;
        d_rel_ = tables.use_h ? tables.h.cols : 0;
        if (tables.use_o && (tables.o_dx.rows != n_dx || tables.o_rx.rows != n_rx))
            throw data_error("predictor: ontology tables do not cover the vocabularies");
        if (tables.use_h && tables.h.rows != n_dx + n_rx)
            throw data_error("predictor: relation table does not cover the joint code space");
        Rng rng(cfg.seed);
        params_.add("emb.E", init_table(n_dx + n_rx, cfg.d_e, rng));
        std::size_t w = visit_width();
        init_gru_params(params_, "m", w, cfg.d_rnn, rng);
        init_gru_params(params_, "d", w, cfg.d_rnn, rng);
        double pb = 1.0 / std::sqrt(static_cast<double>(2 * cfg.d_rnn + w));
        params_.add("head.WP", Matrix::uniform(2 * cfg.d_rnn + w, cfg.d_rnn, -pb, pb, rng));
        double ob = 1.0 / std::sqrt(static_cast<double>(cfg.d_rnn));
        params_.add("head.WO", Matrix::uniform(cfg.d_rnn, n_rx, -ob, ob, rng));
        params_.add("head.bo", Matrix::zeros(1, n_rx));
    }

    std::size_t visit_width() const { return d_onto_ + d_rel_ + cfg_.d_e; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const PredictorConfig& config() const { return cfg_; }

    struct Tape {
        BoundParams bp;
        GruVars gru_m, gru_d;
        Graph::Var e_table, wp, wo, bo;
    };

    Tape bind(Graph& g, ParamStore& store) const {
        Tape t{BoundParams(g, store), {}, {}, 0, 0, 0, 0};
        t.e_table = t.bp.bind("emb.E");
        t.gru_m = bind_gru(t.bp, "m");
        t.gru_d = bind_gru(t.bp, "d");
        t.wp = t.bp.bind("head.WP");
        t.wo = t.bp.bind("head.WO");
        t.bo = t.bp.bind("head.bo");
        return t;
    }

    // Fused visit vector [o, h, e] for one kind; frozen components enter as
    // constants, the E component is differentiable through the table.
    Graph::Var fuse(Graph& g, const Tape& t, const VisitFeatureCache& cache, const Visit& visit,
                    std::size_t visit_idx, CodeKind kind) const {
        const auto& codes = kind == CodeKind::Diagnosis ? visit.dx : visit.rx;
        std::vector<Graph::Var> parts;
        if (use_o_) {
            const Matrix& row = kind == CodeKind::Diagnosis ? cache.o_dx.at(visit_idx) : cache.o_rx.at(visit_idx);
            parts.push_back(g.leaf(row));
        }
        if (use_h_) {
            const Matrix& row = kind == CodeKind::Diagnosis ? cache.h_dx.at(visit_idx) : cache.h_rx.at(visit_idx);
            parts.push_back(g.leaf(row));
        }
        if (codes.empty()) {
            parts.push_back(g.leaf(Matrix::zeros(1, cfg_.d_e)));
        } else {
            std::vector<std::size_t> joint = codes;
            if (kind == CodeKind::Medication)
                for (auto& c : joint) c += n_dx_;
            for (auto c : joint)
                if (c >= n_dx_ + n_rx_) throw data_error("fusion: code index out of vocabulary range");
            parts.push_back(g.mean_over_rows(g.row_gather(t.e_table, joint)));
        }
        return parts.size() == 1 ? parts[0] : g.concat_cols(std::span<const Graph::Var>(parts));
    }

    struct PatientForward {
        std::vector<std::size_t> target_visits;   // 0-based visit indices with nonempty medications
        std::vector<Graph::Var> probabilities;    // per target, 1 x |C_m|
        bool has_loss = false;                    // at least one eligible target
        Graph::Var loss = 0;                      // 1 x 1; mean BCE over targets, valid when has_loss
    };

    // Runs both channels over the whole record and scores every eligible
    // target visit t (0-based index >= 1, nonempty medication set): the
    // medication channel consumes visits 0..t-1, the diagnosis channel 0..t.
    PatientForward forward(Graph& g, const Tape& t, const PatientRecord& p,
                           const VisitFeatureCache& cache) const {
        if (p.visits.size() < 2) throw contract_error("predictor: patient has no history to condition on");
        const std::size_t T = p.visits.size();
        std::vector<Graph::Var> x_d(T), x_m(T);
        for (std::size_t i = 0; i < T; ++i) {
            x_d[i] = fuse(g, t, cache, p.visits[i], i, CodeKind::Diagnosis);
            x_m[i] = fuse(g, t, cache, p.visits[i], i, CodeKind::Medication);
        }
        Graph::Var h0 = g.leaf(Matrix::zeros(1, cfg_.d_rnn));
        std::vector<Graph::Var> hd_after(T), hm_after(T);
        Graph::Var hd = h0, hm = h0;
        for (std::size_t i = 0; i < T; ++i) {
            hd = gru_step(g, t.gru_d, x_d[i], hd);
            hd_after[i] = hd;
        }
        for (std::size_t i = 0; i + 1 < T; ++i) {
            hm = gru_step(g, t.gru_m, x_m[i], hm);
            hm_after[i] = hm;
        }

        PatientForward out;
        std::vector<Graph::Var> target_losses;
        for (std::size_t tv = 1; tv < T; ++tv) {
            if (p.visits[tv].rx.empty()) continue;
            Graph::Var rep = g.concat_cols({hm_after[tv - 1], hd_after[tv], x_d[tv]});
            Graph::Var op = g.matmul(rep, t.wp);
            Graph::Var logits = g.add(g.matmul(op, t.wo), t.bo);
            Graph::Var probs = g.sigmoid(logits);
            out.target_visits.push_back(tv);
            out.probabilities.push_back(probs);
            target_losses.push_back(bce_term(g, probs, p.visits[tv].rx));
        }
        if (!target_losses.empty()) {
            Graph::Var sum = target_losses[0];
            for (std::size_t i = 1; i < target_losses.size(); ++i) sum = g.add(sum, target_losses[i]);
            out.loss = g.scale(sum, 1.0 / static_cast<double>(target_losses.size()));
            out.has_loss = true;
        }
        return out;
    }

    // Final hidden states for target visit t (1-based, 2 <= t <= T), exposed
    // for recurrence-level verification.
    std::pair<Matrix, Matrix> encode_history(const PatientRecord& p, std::size_t t, ParamStore& store,
                                             const VisitFeatureCache& cache) const {
        if (t < 2 || t > p.visits.size())
            throw contract_error("encode_history: target index " + std::to_string(t) + " out of range 2..T");
        Graph g;
        Tape tape = bind(g, store);
        std::size_t tv = t - 1;
        Graph::Var h0 = g.leaf(Matrix::zeros(1, cfg_.d_rnn));
        Graph::Var hm = h0, hd = h0;
        for (std::size_t i = 0; i < tv; ++i)
            hm = gru_step(g, tape.gru_m, fuse(g, tape, cache, p.visits[i], i, CodeKind::Medication), hm);
        for (std::size_t i = 0; i <= tv; ++i)
            hd = gru_step(g, tape.gru_d, fuse(g, tape, cache, p.visits[i], i, CodeKind::Diagnosis), hd);
        return {g.value(hm), g.value(hd)};
    }

    std::vector<EvalRecord> predict_patient(const PatientRecord& p, const VisitFeatureCache& cache,
                                            ParamStore& store) const {
        Graph g;
        Tape tape = bind(g, store);
        PatientForward fwd = forward(g, tape, p, cache);
        std::vector<EvalRecord> records;
        for (std::size_t k = 0; k < fwd.target_visits.size(); ++k) {
            const Matrix& probs = g.value(fwd.probabilities[k]);
            EvalRecord r;
            r.truth = p.visits[fwd.target_visits[k]].rx;
            r.scores.assign(probs.data.begin(), probs.data.end());
            for (std::size_t j = 0; j < probs.cols; ++j)
                if (probs(0, j) > cfg_.threshold) r.predicted.push_back(j);
            records.push_back(std::move(r));
        }
        return records;
    }

private:
    static Matrix init_table(std::size_t n, std::size_t d, Rng& rng) {
        double b = 1.0 / std::sqrt(static_cast<double>(d));
        return Matrix::uniform(n, d, -b, b, rng);
    }

    Graph::Var bce_term(Graph& g, Graph::Var probs, const std::vector<std::size_t>& truth) const {
        constexpr double eps = 1e-12;
        Matrix y(1, n_rx_, 0.0);
        for (auto m : truth) y(0, m) = 1.0;
        Matrix ybar(1, n_rx_, 1.0);
        for (auto m : truth) ybar(0, m) = 0.0;
        Graph::Var yv = g.leaf(std::move(y));
        Graph::Var ybarv = g.leaf(std::move(ybar));
        Graph::Var p = g.clamp(probs, eps, 1.0 - eps);
        Graph::Var q = g.clamp(g.scale(g.add_const(probs, -1.0), -1.0), eps, 1.0 - eps);
        Graph::Var ll = g.add(g.hadamard(yv, g.log_(p)), g.hadamard(ybarv, g.log_(q)));
        return g.scale(g.mean_all(ll), -1.0);
    }

    std::size_t n_dx_, n_rx_;
    PredictorConfig cfg_;
    bool use_o_, use_h_;
    std::size_t d_onto_ = 0, d_rel_ = 0;
    ParamStore params_;
};

// Elementwise BCE over one probability/truth vector, for oracle checks.
inline double bce_loss(const std::vector<double>& probs, const std::vector<double>& truth) {
    if (probs.size() != truth.size()) throw shape_error("bce_loss: length mismatch");
    if (probs.empty()) throw contract_error("bce_loss: empty input");
    constexpr double eps = 1e-12;
    double sum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        double p = std::min(std::max(probs[i], eps), 1.0 - eps);
        sum += truth[i] * std::log(p) + (1.0 - truth[i]) * std::log(1.0 - p);
    }
    double loss = -sum / static_cast<double>(probs.size());
    if (!std::isfinite(loss)) throw numeric_error("bce_loss: non-finite loss");
    return loss;
}

// ---------------------------------------------------------------------------
// Training

struct EpochMetrics {
    std::size_t epoch = 0;
    std::string split;
    MetricRow row;
};

struct TrainResult {
    ParamStore best_params;
    std::size_t best_epoch = 0;
    double best_val_jaccard = -1.0;
    std::vector<EpochMetrics> log;
    MetricRow test;
};

inline std::vector<EvalRecord> evaluate_split(const PredictorModel& model, const Cohort& cohort,
                                              const std::vector<std::size_t>& patient_indices,
                                              const FusionTables& tables, ParamStore& store) {
    std::vector<EvalRecord> records;
    for (auto idx : patient_indices) {
        const PatientRecord& p = cohort.multi_visit.at(idx);
        VisitFeatureCache cache = build_visit_features(p, tables, cohort.n_dx());
        auto recs = model.predict_patient(p, cache, store);
        records.insert(records.end(), recs.begin(), recs.end());
    }
    return records;
}

inline TrainResult train_predictor(const Cohort& cohort, const DatasetSplit& split, const FusionTables& tables,
                                   const PredictorConfig& cfg) {
    if (split.train.empty()) throw config_error("train: empty training split");
    PredictorModel model(cohort.n_dx(), cohort.n_rx(), tables, cfg);
    AdamOptimizer opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    Rng order_rng(cfg.seed ^ 0xb5297a4d3f8c2a61ull);

    // Frozen per-visit features computed once per patient.
    std::vector<VisitFeatureCache> caches(cohort.multi_visit.size());
    for (std::size_t i = 0; i < cohort.multi_visit.size(); ++i)
        caches[i] = build_visit_features(cohort.multi_visit[i], tables, cohort.n_dx());

    TrainResult res;
    res.best_params = model.params();
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = split.train;
        order_rng.shuffle(order);
        for (auto idx : order) {
            const PatientRecord& p = cohort.multi_visit.at(idx);
            try {
                Graph g;
                auto tape = model.bind(g, model.params());
                auto fwd = model.forward(g, tape, p, caches[idx]);
                if (!fwd.has_loss) continue;
                g.backward(fwd.loss);
                opt.apply(tape.bp.grads());
            } catch (const numeric_error& e) {
                throw numeric_error("train epoch " + std::to_string(epoch) + " patient " + p.id + ": " +
                                    e.what());
            }
        }
        auto val_records = evaluate_split(model, cohort, split.validation, tables, model.params());
        MetricRow val = compute_metrics(val_records, cfg.pooled_prauc);
        res.log.push_back({epoch, "validation", val});
        if (val.jaccard > res.best_val_jaccard) {
            res.best_val_jaccard = val.jaccard;
            res.best_epoch = epoch;
            res.best_params = model.params();
        }
    }
    auto test_records = evaluate_split(model, cohort, split.test, tables, res.best_params);
    res.test = compute_metrics(test_records, cfg.pooled_prauc);
    res.log.push_back({res.best_epoch, "test", res.test});
    return res;
}

}  // namespace knowaug
