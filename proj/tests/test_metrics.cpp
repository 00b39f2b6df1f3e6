#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "knowaug/metrics.hpp"
#include "knowaug/rng.hpp"
#include "testutil.hpp"

using namespace knowaug;

namespace {

// Set-algebra oracle built directly on std::set operations.
double oracle_jaccard(const std::set<std::size_t>& t, const std::set<std::size_t>& p) {
    std::set<std::size_t> inter, uni;
    std::set_intersection(t.begin(), t.end(), p.begin(), p.end(), std::inserter(inter, inter.begin()));
    std::set_union(t.begin(), t.end(), p.begin(), p.end(), std::inserter(uni, uni.begin()));
    if (uni.empty()) return 1.0;
    return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

double oracle_f1(const std::set<std::size_t>& t, const std::set<std::size_t>& p) {
    if (t.empty() && p.empty()) return 1.0;
    std::set<std::size_t> inter;
    std::set_intersection(t.begin(), t.end(), p.begin(), p.end(), std::inserter(inter, inter.begin()));
    double prec = p.empty() ? 0.0 : static_cast<double>(inter.size()) / static_cast<double>(p.size());
    double rec = t.empty() ? 0.0 : static_cast<double>(inter.size()) / static_cast<double>(t.size());
    if (prec + rec == 0.0) return 0.0;
    return 2 * prec * rec / (prec + rec);
}

EvalRecord rec(std::vector<std::size_t> truth, std::vector<std::size_t> predicted,
               std::vector<double> scores = {}) {
    return EvalRecord{std::move(truth), std::move(predicted), std::move(scores)};
}

}  // namespace

TEST_CASE("visit jaccard on the worked overlap example") {
    CHECK(visit_jaccard(rec({0, 1, 2}, {1, 2, 3})) == Catch::Approx(0.5));  // 2/4
    CHECK(visit_jaccard(rec({0, 1}, {0, 1})) == 1.0);
    CHECK(visit_jaccard(rec({0, 1}, {2, 3})) == 0.0);  // disjoint
}

TEST_CASE("cohort jaccard averages per-visit values") {
    std::vector<EvalRecord> rs = {rec({0, 1}, {0, 1}), rec({0, 1, 2}, {1, 2, 3})};
    CHECK(jaccard(rs) == Catch::Approx(0.75));  // (1.0 + 0.5)/2
}

TEST_CASE("visit f1 on the precision=recall example") {
    // truth {a,b,c}, predicted {b,c,d}: P = R = 2/3, F1 = 2/3.
    CHECK(visit_f1(rec({0, 1, 2}, {1, 2, 3})) == Catch::Approx(2.0 / 3.0));
    CHECK(visit_f1(rec({0, 1}, {2, 3})) == 0.0);
    CHECK(visit_f1(rec({0}, {})) == 0.0);
    CHECK(visit_f1(rec({}, {0})) == 0.0);
}

TEST_CASE("both-empty visits score one under both metrics") {
    CHECK(visit_jaccard(rec({}, {})) == 1.0);
    CHECK(visit_f1(rec({}, {})) == 1.0);
}

TEST_CASE("single-visit identity J = F1/(2-F1) holds everywhere") {
    Rng rng(5150);
    for (int trial = 0; trial < 200; ++trial) {
        std::set<std::size_t> t, p;
        std::size_t nt = rng.next_index(5), np = rng.next_index(5);
        for (std::size_t k = 0; k < nt; ++k) t.insert(rng.next_index(8));
        for (std::size_t k = 0; k < np; ++k) p.insert(rng.next_index(8));
        EvalRecord r = rec({t.begin(), t.end()}, {p.begin(), p.end()});
        double f = visit_f1(r);
        CHECK(visit_jaccard(r) == Catch::Approx(f / (2.0 - f)).epsilon(0).margin(1e-12));
    }
}

TEST_CASE("visit metrics match the set-algebra oracle") {
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        std::set<std::size_t> t, p;
        std::size_t nt = rng.next_index(6), np = rng.next_index(6);
        for (std::size_t k = 0; k < nt; ++k) t.insert(rng.next_index(10));
        for (std::size_t k = 0; k < np; ++k) p.insert(rng.next_index(10));
        EvalRecord r = rec({t.begin(), t.end()}, {p.begin(), p.end()});
        CHECK(visit_jaccard(r) == Catch::Approx(oracle_jaccard(t, p)).epsilon(0).margin(1e-12));
        CHECK(visit_f1(r) == Catch::Approx(oracle_f1(t, p)).epsilon(0).margin(1e-12));
    }
}

TEST_CASE("average precision on the three-score example") {
    // scores (0.9, 0.8, 0.3), positives {0, 2}: hits at ranks 1 and 3.
    CHECK(average_precision({0.9, 0.8, 0.3}, {0, 2}) ==
          Catch::Approx((1.0 / 1.0 + 2.0 / 3.0) / 2.0).epsilon(0).margin(1e-12));
    CHECK(average_precision({0.9, 0.8, 0.3}, {0, 2}) == Catch::Approx(0.8333).margin(5e-5));
}

TEST_CASE("perfect ranking yields AP one; uniform scores yield the tie rule") {
    CHECK(average_precision({0.9, 0.8, 0.1, 0.05}, {0, 1}) == 1.0);
    // All scores tied: stable sort keeps index order, so positives at the
    // front still score 1.
    CHECK(average_precision({0.5, 0.5, 0.5}, {0}) == 1.0);
    // Single positive ranked last out of k: AP = 1/k.
    CHECK(average_precision({0.9, 0.8, 0.1}, {2}) == Catch::Approx(1.0 / 3.0));
}

TEST_CASE("average precision is invariant to monotone score transforms") {
    Rng rng(808);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> scores;
        for (int k = 0; k < 7; ++k) scores.push_back(rng.next_double());
        std::vector<std::size_t> pos;
        for (std::size_t k = 0; k < 7; ++k)
            if (rng.next_double() < 0.4) pos.push_back(k);
        if (pos.empty()) pos.push_back(rng.next_index(7));
        std::vector<double> warped;
        for (double s : scores) warped.push_back(2.0 * std::atan(5.0 * s) + 1.0);
        CHECK(average_precision(scores, pos) ==
              Catch::Approx(average_precision(warped, pos)).epsilon(0).margin(1e-12));
    }
}

TEST_CASE("average precision matches a rank-walk oracle") {
    Rng rng(606);
    for (int trial = 0; trial < 60; ++trial) {
        std::vector<double> scores;
        for (int k = 0; k < 9; ++k) scores.push_back(rng.next_double());
        std::vector<std::size_t> pos;
        for (std::size_t k = 0; k < 9; ++k)
            if (rng.next_double() < 0.35) pos.push_back(k);
        if (pos.empty()) pos.push_back(0);
        // Oracle: sort (score, index) pairs, walk the ranking, accumulate
        // precision at each positive.
        std::vector<std::pair<double, std::size_t>> ranked;
        for (std::size_t k = 0; k < scores.size(); ++k) ranked.push_back({-scores[k], k});
        std::sort(ranked.begin(), ranked.end());
        std::set<std::size_t> pset(pos.begin(), pos.end());
        double sum = 0.0;
        std::size_t hits = 0;
        for (std::size_t k = 0; k < ranked.size(); ++k)
            if (pset.count(ranked[k].second)) {
                ++hits;
                sum += static_cast<double>(hits) / static_cast<double>(k + 1);
            }
        double want = sum / static_cast<double>(pset.size());
        CHECK(average_precision(scores, pos) == Catch::Approx(want).epsilon(0).margin(1e-12));
    }
}

TEST_CASE("average precision requires a nonempty positive set") {
    CHECK_THROWS_AS(average_precision({0.5, 0.4}, {}), contract_error);
}

TEST_CASE("pr_auc excludes empty-truth visits with a warning") {
    std::vector<EvalRecord> rs = {rec({0}, {0}, {0.9, 0.1, 0.1}),
                                  rec({}, {}, {0.2, 0.2, 0.2}),
                                  rec({2}, {2}, {0.1, 0.2, 0.9})};
    std::vector<std::string> warnings;
    double v = pr_auc(rs, false, &warnings);
    CHECK(v == 1.0);  // both scored visits rank their positive first
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("visit 1") != std::string::npos);

    std::vector<EvalRecord> all_empty = {rec({}, {}, {0.2, 0.2})};
    CHECK_THROWS_AS(pr_auc(all_empty, false), data_error);
}

TEST_CASE("pooled pr_auc concatenates visits into one ranking") {
    std::vector<EvalRecord> rs = {rec({0}, {0}, {0.9, 0.1}), rec({1}, {1}, {0.2, 0.8})};
    // Pool: scores (0.9, 0.1, 0.2, 0.8), positives {0, 3}. Ranking 0.9, 0.8,
    // 0.2, 0.1 hits positives at ranks 1 and 2: AP = (1 + 1)/2 = 1.
    CHECK(pr_auc(rs, true) == 1.0);

    std::vector<EvalRecord> mixed = {rec({0}, {0}, {0.1, 0.9}), rec({1}, {1}, {0.2, 0.8})};
    // Pool: scores (0.1, 0.9, 0.2, 0.8), positives {0, 3}. Ranking: idx1(0.9),
    // idx3(0.8), idx2(0.2), idx0(0.1): hits at ranks 2 and 4.
    CHECK(pr_auc(mixed, true) == Catch::Approx((0.5 + 0.5) / 2.0));
}

TEST_CASE("compute_metrics bundles the three values") {
    std::vector<EvalRecord> rs = {rec({0, 1, 2}, {1, 2, 3}, {0.1, 0.9, 0.8, 0.7})};
    MetricRow row = compute_metrics(rs);
    CHECK(row.jaccard == Catch::Approx(0.5));
    CHECK(row.f1 == Catch::Approx(2.0 / 3.0));
    CHECK(row.prauc == Catch::Approx(average_precision({0.1, 0.9, 0.8, 0.7}, {0, 1, 2})));
}
