#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "knowaug/predictor.hpp"
#include "testutil.hpp"

using namespace knowaug;

namespace {

double sgm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

FusionTables toy_tables(std::size_t n_dx, std::size_t n_rx, std::size_t d_onto, std::size_t d_rel,
                        Rng& rng) {
    FusionTables t;
    t.o_dx = testutil::random_matrix(n_dx, d_onto, rng);
    t.o_rx = testutil::random_matrix(n_rx, d_onto, rng);
    t.h = testutil::random_matrix(n_dx + n_rx, d_rel, rng);
    return t;
}

FusionTables e_only_tables() {
    FusionTables t;
    t.use_o = false;
    t.use_h = false;
    return t;
}

void zero_all_params(ParamStore& store) {
    for (auto& [name, m] : store.items())
        for (double& v : m.data) v = 0.0;
}

// Scalar GRU recurrence with plain loops, matching the gate convention
// h' = (1-z).h + z.tanh-candidate.
std::vector<double> oracle_gru_run(const ParamStore& ps, const std::string& prefix,
                                   const std::vector<std::vector<double>>& xs, std::size_t hidden) {
    std::vector<double> h(hidden, 0.0);
    auto affine = [&](const Matrix& W, const std::vector<double>& x, const Matrix& U,
                      const std::vector<double>& hh, const Matrix& b, std::size_t j) {
        double s = b(0, j);
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * W(i, j);
        for (std::size_t i = 0; i < hh.size(); ++i) s += hh[i] * U(i, j);
        return s;
    };
    for (const auto& x : xs) {
        const Matrix& Wz = ps.get(prefix + ".Wz");
        const Matrix& Wr = ps.get(prefix + ".Wr");
        const Matrix& Wh = ps.get(prefix + ".Wh");
        const Matrix& Uz = ps.get(prefix + ".Uz");
        const Matrix& Ur = ps.get(prefix + ".Ur");
        const Matrix& Uh = ps.get(prefix + ".Uh");
        std::vector<double> z(hidden), r(hidden), hn(hidden);
        for (std::size_t j = 0; j < hidden; ++j) {
            z[j] = sgm(affine(Wz, x, Uz, h, ps.get(prefix + ".bz"), j));
            r[j] = sgm(affine(Wr, x, Ur, h, ps.get(prefix + ".br"), j));
        }
        std::vector<double> rh(hidden);
        for (std::size_t j = 0; j < hidden; ++j) rh[j] = r[j] * h[j];
        for (std::size_t j = 0; j < hidden; ++j)
            hn[j] = std::tanh(affine(Wh, x, Uh, rh, ps.get(prefix + ".bh"), j));
        for (std::size_t j = 0; j < hidden; ++j) h[j] = (1.0 - z[j]) * h[j] + z[j] * hn[j];
    }
    return h;
}

std::vector<double> mean_e_rows(const Matrix& E, std::vector<std::size_t> joint) {
    std::vector<double> out(E.cols, 0.0);
    if (joint.empty()) return out;
    for (auto i : joint)
        for (std::size_t c = 0; c < E.cols; ++c) out[c] += E(i, c);
    for (auto& v : out) v /= static_cast<double>(joint.size());
    return out;
}

}  // namespace

TEST_CASE("fusing a single-code visit returns that code's rows") {
    Rng rng(50);
    FusionTables tables = toy_tables(3, 2, 4, 3, rng);
    PredictorConfig cfg;
    cfg.d_e = 2;
    cfg.d_rnn = 2;
    cfg.seed = 1;
    PredictorModel model(3, 2, tables, cfg);
    CHECK(model.visit_width() == 4 + 3 + 2);

    PatientRecord p{"p", {{{1}, {0}}, {{1}, {0}}}};
    VisitFeatureCache cache = build_visit_features(p, tables, 3);

    Graph g;
    auto tape = model.bind(g, model.params());
    Graph::Var xd = model.fuse(g, tape, cache, p.visits[0], 0, CodeKind::Diagnosis);
    const Matrix& vd = g.value(xd);
    REQUIRE(vd.cols == model.visit_width());
    const Matrix& E = model.params().get("emb.E");
    for (std::size_t c = 0; c < 4; ++c) CHECK(vd(0, c) == tables.o_dx(1, c));
    for (std::size_t c = 0; c < 3; ++c) CHECK(vd(0, 4 + c) == tables.h(1, c));
    for (std::size_t c = 0; c < 2; ++c) CHECK(vd(0, 7 + c) == E(1, c));

    Graph::Var xm = model.fuse(g, tape, cache, p.visits[0], 0, CodeKind::Medication);
    const Matrix& vm = g.value(xm);
    for (std::size_t c = 0; c < 4; ++c) CHECK(vm(0, c) == tables.o_rx(0, c));
    for (std::size_t c = 0; c < 3; ++c) CHECK(vm(0, 4 + c) == tables.h(3, c));  // joint row |C_d|+0
    for (std::size_t c = 0; c < 2; ++c) CHECK(vm(0, 7 + c) == E(3, c));
}

TEST_CASE("opposite embedding rows cancel to the zero fusion vector") {
    Rng rng(51);
    FusionTables tables;
    tables.o_dx = Matrix::zeros(2, 3);
    tables.o_rx = Matrix::zeros(1, 3);
    tables.h = Matrix::zeros(3, 2);
    Matrix r1 = testutil::random_matrix(1, 3, rng), r2 = testutil::random_matrix(1, 2, rng);
    for (std::size_t c = 0; c < 3; ++c) {
        tables.o_dx(0, c) = r1(0, c);
        tables.o_dx(1, c) = -r1(0, c);
    }
    for (std::size_t c = 0; c < 2; ++c) {
        tables.h(0, c) = r2(0, c);
        tables.h(1, c) = -r2(0, c);
    }
    PredictorConfig cfg;
    cfg.d_e = 2;
    cfg.d_rnn = 2;
    PredictorModel model(2, 1, tables, cfg);
    Matrix& E = model.params().get("emb.E");
    for (std::size_t c = 0; c < 2; ++c) {
        E(0, c) = 0.7;
        E(1, c) = -0.7;
    }

    PatientRecord p{"p", {{{0, 1}, {0}}, {{0, 1}, {0}}}};
    VisitFeatureCache cache = build_visit_features(p, tables, 2);
    Graph g;
    auto tape = model.bind(g, model.params());
    const Matrix& v = g.value(model.fuse(g, tape, cache, p.visits[0], 0, CodeKind::Diagnosis));
    for (std::size_t c = 0; c < v.cols; ++c)
        CHECK(v(0, c) == Catch::Approx(0.0).epsilon(0).margin(1e-15));
}

TEST_CASE("fusion ignores code order within a visit") {
    Rng rng(52);
    FusionTables tables = toy_tables(4, 3, 3, 2, rng);
    PredictorConfig cfg;
    cfg.d_e = 3;
    cfg.d_rnn = 2;
    PredictorModel model(4, 3, tables, cfg);

    PatientRecord a{"a", {{{0, 2, 3}, {1, 2}}, {{0}, {1}}}};
    PatientRecord b{"b", {{{3, 0, 2}, {2, 1}}, {{0}, {1}}}};
    VisitFeatureCache ca = build_visit_features(a, tables, 4);
    VisitFeatureCache cb = build_visit_features(b, tables, 4);
    Graph g;
    auto tape = model.bind(g, model.params());
    const Matrix& va = g.value(model.fuse(g, tape, ca, a.visits[0], 0, CodeKind::Diagnosis));
    const Matrix& vb = g.value(model.fuse(g, tape, cb, b.visits[0], 0, CodeKind::Diagnosis));
    for (std::size_t c = 0; c < va.cols; ++c)
        CHECK(va(0, c) == Catch::Approx(vb(0, c)).epsilon(0).margin(1e-15));
}

TEST_CASE("zero parameters and inputs keep the hidden states at zero") {
    PredictorConfig cfg;
    cfg.d_e = 3;
    cfg.d_rnn = 4;
    PredictorModel model(2, 2, e_only_tables(), cfg);
    zero_all_params(model.params());

    PatientRecord p{"p", {{{0}, {1}}, {{1}, {0}}}};
    VisitFeatureCache cache = build_visit_features(p, e_only_tables(), 2);
    auto [hm, hd] = model.encode_history(p, 2, model.params(), cache);
    for (double v : hm.data) CHECK(v == 0.0);
    for (double v : hd.data) CHECK(v == 0.0);
}

TEST_CASE("hidden states match a step-by-step scalar recurrence") {
    PredictorConfig cfg;
    cfg.d_e = 3;
    cfg.d_rnn = 2;
    cfg.seed = 9;
    PredictorModel model(3, 2, e_only_tables(), cfg);

    PatientRecord p{"p", {{{0, 2}, {1}}, {{1}, {0, 1}}}};
    VisitFeatureCache cache = build_visit_features(p, e_only_tables(), 3);
    auto [hm, hd] = model.encode_history(p, 2, model.params(), cache);

    const Matrix& E = model.params().get("emb.E");
    // Medication channel consumes exactly visit 0 (joint indices 3 + rx).
    auto want_hm = oracle_gru_run(model.params(), "m", {mean_e_rows(E, {4})}, 2);
    // Diagnosis channel consumes visits 0 and 1.
    auto want_hd = oracle_gru_run(model.params(), "d", {mean_e_rows(E, {0, 2}), mean_e_rows(E, {1})}, 2);
    for (std::size_t j = 0; j < 2; ++j) {
        CHECK(hm(0, j) == Catch::Approx(want_hm[j]).epsilon(0).margin(1e-10));
        CHECK(hd(0, j) == Catch::Approx(want_hd[j]).epsilon(0).margin(1e-10));
    }

    CHECK_THROWS_AS(model.encode_history(p, 1, model.params(), cache), contract_error);
    CHECK_THROWS_AS(model.encode_history(p, 3, model.params(), cache), contract_error);
}

TEST_CASE("zero weights predict one-half for every medication") {
    PredictorConfig cfg;
    cfg.d_e = 2;
    cfg.d_rnn = 2;
    PredictorModel model(2, 3, e_only_tables(), cfg);
    zero_all_params(model.params());

    PatientRecord p{"p", {{{0}, {1}}, {{1}, {0, 2}}}};
    VisitFeatureCache cache = build_visit_features(p, e_only_tables(), 2);
    auto records = model.predict_patient(p, cache, model.params());
    REQUIRE(records.size() == 1);
    REQUIRE(records[0].scores.size() == 3);  // probability vector length |C_m|
    for (double s : records[0].scores) CHECK(s == 0.5);
    CHECK(records[0].predicted.empty());  // strict threshold at 0.5
}

TEST_CASE("an output bias of ten saturates exactly that medication") {
    PredictorConfig cfg;
    cfg.d_e = 2;
    cfg.d_rnn = 2;
    PredictorModel model(2, 3, e_only_tables(), cfg);
    zero_all_params(model.params());
    model.params().get("head.bo")(0, 1) = 10.0;

    PatientRecord p{"p", {{{0}, {1}}, {{1}, {0}}}};
    VisitFeatureCache cache = build_visit_features(p, e_only_tables(), 2);
    auto records = model.predict_patient(p, cache, model.params());
    REQUIRE(records.size() == 1);
    CHECK(records[0].scores[0] == 0.5);
    CHECK(records[0].scores[1] == Catch::Approx(0.9999546021312976).epsilon(0).margin(1e-14));
    CHECK(records[0].scores[2] == 0.5);
    CHECK(records[0].predicted == std::vector<std::size_t>{1});

    // Monotonicity: raising one bias raises only that probability.
    model.params().get("head.bo")(0, 2) = 0.3;
    auto again = model.predict_patient(p, cache, model.params());
    CHECK(again[0].scores[2] > records[0].scores[2]);
    CHECK(again[0].scores[0] == records[0].scores[0]);
    CHECK(again[0].scores[1] == records[0].scores[1]);
}

TEST_CASE("bce matches its closed-form values") {
    CHECK(bce_loss({0.5, 0.5, 0.5}, {1, 0, 1}) ==
          Catch::Approx(0.6931471805599453).epsilon(0).margin(1e-14));
    CHECK(bce_loss({0.9, 0.2}, {1, 0}) == Catch::Approx(0.164252033486018).epsilon(0).margin(1e-14));
    CHECK(bce_loss({1.0 - 1e-13, 1e-13}, {1, 0}) == Catch::Approx(0.0).epsilon(0).margin(1e-10));
    CHECK_THROWS_AS(bce_loss({0.5}, {1, 0}), shape_error);
    CHECK_THROWS_AS(bce_loss({}, {}), contract_error);
}

TEST_CASE("the tape loss equals the scalar bce oracle over target visits") {
    Rng rng(53);
    FusionTables tables = toy_tables(3, 3, 2, 2, rng);
    PredictorConfig cfg;
    cfg.d_e = 2;
    cfg.d_rnn = 3;
    cfg.seed = 4;
    PredictorModel model(3, 3, tables, cfg);

    PatientRecord p{"p", {{{0}, {1}}, {{1, 2}, {0, 2}}, {{2}, {1}}}};
    VisitFeatureCache cache = build_visit_features(p, tables, 3);
    Graph g;
    auto tape = model.bind(g, model.params());
    auto fwd = model.forward(g, tape, p, cache);
    REQUIRE(fwd.has_loss);
    REQUIRE(fwd.target_visits == std::vector<std::size_t>{1, 2});

    double want = 0.0;
    std::vector<std::vector<double>> truths = {{1, 0, 1}, {0, 1, 0}};
    for (std::size_t k = 0; k < 2; ++k) {
        const Matrix& probs = g.value(fwd.probabilities[k]);
        want += bce_loss(probs.data, truths[k]);
    }
    want /= 2.0;
    CHECK(g.value(fwd.loss)(0, 0) == Catch::Approx(want).epsilon(0).margin(1e-12));
}

TEST_CASE("only visits after the first with medications become targets") {
    Rng rng(54);
    FusionTables tables = toy_tables(2, 2, 2, 2, rng);
    PredictorConfig cfg;
    cfg.d_e = 2;
    cfg.d_rnn = 2;
    PredictorModel model(2, 2, tables, cfg);

    PatientRecord p{"p", {{{0}, {0, 1}}, {{1}, {}}, {{0}, {1}}}};
    VisitFeatureCache cache = build_visit_features(p, tables, 2);
    Graph g;
    auto tape = model.bind(g, model.params());
    auto fwd = model.forward(g, tape, p, cache);
    CHECK(fwd.target_visits == std::vector<std::size_t>{2});  // visit 1 empty, visit 0 never

    PatientRecord empty_after{"q", {{{0}, {0}}, {{1}, {}}}};
    VisitFeatureCache c2 = build_visit_features(empty_after, tables, 2);
    Graph g2;
    auto t2 = model.bind(g2, model.params());
    auto f2 = model.forward(g2, t2, empty_after, c2);
    CHECK_FALSE(f2.has_loss);
    CHECK(f2.target_visits.empty());

    PatientRecord single{"s", {{{0}, {0}}}};
    VisitFeatureCache c3 = build_visit_features(single, tables, 2);
    Graph g3;
    auto t3 = model.bind(g3, model.params());
    CHECK_THROWS_AS(model.forward(g3, t3, single, c3), contract_error);
}

TEST_CASE("supervised gradients pass finite differences on a toy cohort") {
    Rng rng(55);
    FusionTables tables = toy_tables(2, 2, 2, 2, rng);
    PredictorConfig cfg;
    cfg.d_e = 2;
    cfg.d_rnn = 2;
    cfg.seed = 6;
    PredictorModel model(2, 2, tables, cfg);

    PatientRecord p{"p", {{{0, 1}, {0}}, {{1}, {0, 1}}, {{0}, {1}}}};
    VisitFeatureCache cache = build_visit_features(p, tables, 2);

    std::vector<std::string> names;
    std::vector<Matrix> inputs;
    for (const auto& [name, m] : model.params().items()) {
        names.push_back(name);
        inputs.push_back(m);
    }
    auto f = [&](const std::vector<Matrix>& in) {
        ParamStore store;
        for (std::size_t i = 0; i < names.size(); ++i) store.add(names[i], in[i]);
        Graph g;
        auto tape = model.bind(g, store);
        auto fwd = model.forward(g, tape, p, cache);
        return g.value(fwd.loss)(0, 0);
    };
    auto numeric = testutil::finite_difference_grads(f, inputs);

    ParamStore store;
    for (std::size_t i = 0; i < names.size(); ++i) store.add(names[i], inputs[i]);
    Graph g;
    auto tape = model.bind(g, store);
    auto fwd = model.forward(g, tape, p, cache);
    g.backward(fwd.loss);
    auto grads = tape.bp.grads();
    REQUIRE(grads.size() == names.size());
    for (const auto& pg : grads) {  // binding order differs from registration order
        auto it = std::find(names.begin(), names.end(), pg.name);
        REQUIRE(it != names.end());
        INFO("parameter " << pg.name);
        CHECK(testutil::grads_close(*pg.grad, numeric[static_cast<std::size_t>(it - names.begin())]));
    }
}

TEST_CASE("zero learning rate freezes the metric trajectory") {
    Rng rng(56);
    Cohort cohort;
    cohort.dx_vocab = {"d0", "d1"};
    cohort.rx_vocab = {"m0", "m1"};
    for (int i = 0; i < 8; ++i) {
        PatientRecord p{"p" + std::to_string(i),
                        {{{static_cast<std::size_t>(i % 2)}, {static_cast<std::size_t>(i % 2)}},
                         {{static_cast<std::size_t>((i + 1) % 2)}, {static_cast<std::size_t>((i + 1) % 2)}}}};
        cohort.multi_visit.push_back(p);
    }
    DatasetSplit split = split_dataset(8, 1);
    FusionTables tables = toy_tables(2, 2, 2, 2, rng);
    PredictorConfig cfg;
    cfg.d_e = 2;
    cfg.d_rnn = 2;
    cfg.lr = 0.0;
    cfg.epochs = 3;
    cfg.seed = 2;
    TrainResult res = train_predictor(cohort, split, tables, cfg);

    std::vector<EpochMetrics> val_rows;
    for (const auto& row : res.log)
        if (row.split == "validation") val_rows.push_back(row);
    REQUIRE(val_rows.size() == 3);
    for (const auto& row : val_rows) {
        CHECK(row.row.jaccard == val_rows[0].row.jaccard);
        CHECK(row.row.f1 == val_rows[0].row.f1);
        CHECK(row.row.prauc == val_rows[0].row.prauc);
    }
    CHECK(res.best_epoch == 1);  // strict improvement keeps the first epoch

    DatasetSplit empty_split;
    empty_split.validation = split.validation;
    empty_split.test = split.test;
    CHECK_THROWS_AS(train_predictor(cohort, empty_split, tables, cfg), config_error);
}

TEST_CASE("training is reproducible for a fixed seed") {
    Rng rng(57);
    Cohort cohort;
    cohort.dx_vocab = {"d0", "d1", "d2"};
    cohort.rx_vocab = {"m0", "m1", "m2"};
    for (int i = 0; i < 10; ++i) {
        std::size_t a = static_cast<std::size_t>(i % 3), b = static_cast<std::size_t>((i + 1) % 3);
        PatientRecord p{"p" + std::to_string(i), {{{a}, {a}}, {{b}, {b}}, {{a, b}, {a, b}}}};
        cohort.multi_visit.push_back(p);
    }
    DatasetSplit split = split_dataset(10, 3);
    FusionTables tables = toy_tables(3, 3, 2, 2, rng);
    PredictorConfig cfg;
    cfg.d_e = 3;
    cfg.d_rnn = 4;
    cfg.lr = 1e-2;
    cfg.epochs = 4;
    cfg.seed = 11;

    TrainResult a = train_predictor(cohort, split, tables, cfg);
    TrainResult b = train_predictor(cohort, split, tables, cfg);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].row.jaccard == b.log[i].row.jaccard);
        CHECK(a.log[i].row.f1 == b.log[i].row.f1);
        CHECK(a.log[i].row.prauc == b.log[i].row.prauc);
    }
    CHECK(a.test.jaccard == b.test.jaccard);

    PredictorConfig other = cfg;
    other.seed = 12;
    TrainResult c = train_predictor(cohort, split, tables, other);
    const Matrix& ea = a.best_params.get("emb.E");
    const Matrix& ec = c.best_params.get("emb.E");
    bool differs = false;
    for (std::size_t i = 0; i < ea.size(); ++i)
        if (ea.data[i] != ec.data[i]) differs = true;
    CHECK(differs);
}

TEST_CASE("pretrained tables stay byte-identical through supervised training") {
    Rng rng(58);
    Cohort cohort;
    cohort.dx_vocab = {"d0", "d1"};
    cohort.rx_vocab = {"m0", "m1"};
    for (int i = 0; i < 6; ++i) {
        std::size_t a = static_cast<std::size_t>(i % 2);
        PatientRecord p{"p" + std::to_string(i), {{{a}, {a}}, {{1 - a}, {1 - a}}}};
        cohort.multi_visit.push_back(p);
    }
    DatasetSplit split = split_dataset(6, 5);
    FusionTables tables = toy_tables(2, 2, 3, 2, rng);
    FusionTables before = tables;
    PredictorConfig cfg;
    cfg.d_e = 2;
    cfg.d_rnn = 2;
    cfg.lr = 1e-2;
    cfg.epochs = 3;
    TrainResult res = train_predictor(cohort, split, tables, cfg);
    (void)res;
    CHECK(tables.o_dx.data == before.o_dx.data);
    CHECK(tables.o_rx.data == before.o_rx.data);
    CHECK(tables.h.data == before.h.data);
}

TEST_CASE("variant table flags shrink the fusion width accordingly") {
    Rng rng(59);
    FusionTables full = toy_tables(2, 2, 4, 3, rng);
    PredictorConfig cfg;
    cfg.d_e = 2;
    cfg.d_rnn = 2;
    CHECK(PredictorModel(2, 2, full, cfg).visit_width() == 4 + 3 + 2);

    FusionTables rg = full;
    rg.use_h = false;
    CHECK(PredictorModel(2, 2, rg, cfg).visit_width() == 4 + 2);

    FusionTables hg = full;
    hg.use_o = false;
    CHECK(PredictorModel(2, 2, hg, cfg).visit_width() == 3 + 2);

    FusionTables none = full;
    none.use_o = false;
    none.use_h = false;
    CHECK(PredictorModel(2, 2, none, cfg).visit_width() == 2);

    FusionTables bad = full;
    bad.o_dx = Matrix::zeros(1, 4);  // does not cover the diagnosis vocabulary
    CHECK_THROWS_AS(PredictorModel(2, 2, bad, cfg), data_error);
}

TEST_CASE("variant names parse and round-trip") {
    CHECK(parse_variant("full") == Variant::Full);
    CHECK(parse_variant("rg-") == Variant::NoRelation);
    CHECK(parse_variant("hg-") == Variant::NoOntology);
    CHECK(parse_variant("hgrg-") == Variant::NoPretraining);
    CHECK(parse_variant("r-") == Variant::RandomRelationInit);
    CHECK(parse_variant("rgw-") == Variant::BinaryRelationWeights);
    CHECK_THROWS_AS(parse_variant("bogus"), config_error);
    for (Variant v : {Variant::Full, Variant::NoRelation, Variant::NoOntology, Variant::NoPretraining,
                      Variant::RandomRelationInit, Variant::BinaryRelationWeights})
        CHECK(parse_variant(variant_name(v)) == v);
}
