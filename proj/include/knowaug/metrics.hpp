#pragma once

// Multi-label evaluation for medication prediction: visit-averaged Jaccard,
// precision/recall/F1, and average-precision PR-AUC.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "knowaug/errors.hpp"

namespace knowaug {

struct EvalRecord {
    std::vector<std::size_t> truth;      // sorted unique medication indices
    std::vector<std::size_t> predicted;  // sorted unique medication indices
    std::vector<double> scores;          // length |C_m|, score per medication
};

namespace detail {

inline std::size_t intersection_size(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::size_t n = 0;
    auto i = a.begin();
    auto j = b.begin();
    while (i != a.end() && j != b.end()) {
        if (*i < *j) ++i;
        else if (*j < *i) ++j;
        else ++n, ++i, ++j;
    }
    return n;
}

}  // namespace detail

// Both-empty visits score 1.0: a correctly predicted empty set.
inline double visit_jaccard(const EvalRecord& r) {
    std::size_t inter = detail::intersection_size(r.truth, r.predicted);
    std::size_t uni = r.truth.size() + r.predicted.size() - inter;
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

inline double visit_f1(const EvalRecord& r) {
    if (r.truth.empty() && r.predicted.empty()) return 1.0;
    std::size_t inter = detail::intersection_size(r.truth, r.predicted);
    double p = r.predicted.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(r.predicted.size());
    double q = r.truth.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(r.truth.size());
    if (p + q == 0.0) return 0.0;
    return 2.0 * p * q / (p + q);
}

// Average precision over the score ranking, ties broken by medication index.
// Returns the AP of one (scores, positives) instance.
inline double average_precision(const std::vector<double>& scores, const std::vector<std::size_t>& positives) {
    if (positives.empty()) throw contract_error("average_precision: empty positive set");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::set<std::size_t> pos(positives.begin(), positives.end());
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (pos.count(order[k])) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(k + 1);
        }
    }
    return sum / static_cast<double>(pos.size());
}

inline double jaccard(const std::vector<EvalRecord>& records) {
    if (records.empty()) throw contract_error("jaccard: no records");
    double sum = 0.0;
    for (const auto& r : records) sum += visit_jaccard(r);
    return sum / static_cast<double>(records.size());
}

inline double f1(const std::vector<EvalRecord>& records) {
    if (records.empty()) throw contract_error("f1: no records");
    double sum = 0.0;
    for (const auto& r : records) sum += visit_f1(r);
    return sum / static_cast<double>(records.size());
}

// Per-visit AP averaged over visits with nonempty truth (default), or one
// pooled AP over all (visit, medication) pairs when pooled is set.
inline double pr_auc(const std::vector<EvalRecord>& records, bool pooled = false,
                     std::vector<std::string>* warnings = nullptr) {
    if (records.empty()) throw contract_error("pr_auc: no records");
    if (pooled) {
        std::vector<double> scores;
        std::vector<std::size_t> positives;
        for (const auto& r : records) {
            std::size_t base = scores.size();
            scores.insert(scores.end(), r.scores.begin(), r.scores.end());
            for (auto t : r.truth) positives.push_back(base + t);
        }
        if (positives.empty()) throw data_error("pr_auc: no positive labels in any visit");
        return average_precision(scores, positives);
    }
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (r.truth.empty()) {
            if (warnings)
                warnings->push_back("pr_auc: visit " + std::to_string(i) + " has empty truth set; excluded");
            continue;
        }
        sum += average_precision(r.scores, r.truth);
        ++used;
    }
    if (used == 0) throw data_error("pr_auc: no visits with nonempty truth");
    return sum / static_cast<double>(used);
}

struct MetricRow {
    double jaccard = 0.0;
    double f1 = 0.0;
    double prauc = 0.0;
};

inline MetricRow compute_metrics(const std::vector<EvalRecord>& records, bool pooled_prauc = false) {
    MetricRow row;
    row.jaccard = jaccard(records);
    row.f1 = f1(records);
    row.prauc = pr_auc(records, pooled_prauc);
    return row;
}

}  // namespace knowaug
