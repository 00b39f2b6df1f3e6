#pragma once

// EMR data model: patient records with visit-level diagnosis/medication code
// sets, vocabulary construction, dataset splitting, and a rule-driven
// synthetic cohort generator for tests and experiments.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "knowaug/config.hpp"
#include "knowaug/errors.hpp"
#include "knowaug/rng.hpp"

namespace knowaug {

enum class CodeKind { Diagnosis, Medication };

inline const char* kind_name(CodeKind k) { return k == CodeKind::Diagnosis ? "diagnosis" : "medication"; }

struct Visit {
    std::vector<std::size_t> dx;  // sorted unique diagnosis indices
    std::vector<std::size_t> rx;  // sorted unique medication indices
};

struct PatientRecord {
    std::string id;
    std::vector<Visit> visits;
};

struct Cohort {
    std::vector<std::string> dx_vocab;  // index -> raw code, lexicographically sorted
    std::vector<std::string> rx_vocab;
    std::vector<PatientRecord> multi_visit;
    std::vector<PatientRecord> single_visit;

    std::size_t n_dx() const { return dx_vocab.size(); }
    std::size_t n_rx() const { return rx_vocab.size(); }
    // Codes live in one joint index space for the relation graph: diagnoses
    // first, then medications offset by |dx_vocab|.
    std::size_t n_codes() const { return dx_vocab.size() + rx_vocab.size(); }
};

namespace detail {

struct RawVisit {
    std::vector<std::string> dx;
    std::vector<std::string> rx;
};

struct RawPatient {
    std::string id;
    std::vector<RawVisit> visits;
};

inline std::vector<std::size_t> to_indices(const std::vector<std::string>& raws,
                                           const std::map<std::string, std::size_t>& vocab) {
    std::set<std::size_t> uniq;
    for (const auto& r : raws) uniq.insert(vocab.at(r));
    return std::vector<std::size_t>(uniq.begin(), uniq.end());
}

}  // namespace detail

// Line-delimited records, one patient per line:
//   {"id": "...", "visits": [{"dx": ["428.0"], "rx": ["N02B"]}, ...]}
inline Cohort load_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open records file: " + path);

    std::vector<detail::RawPatient> patients;
    std::set<std::string> dx_codes, rx_codes;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw data_error(path + ":" + std::to_string(lineno) + ": malformed record: " + e.what());
        }
        auto where = [&] { return path + ":" + std::to_string(lineno); };
        if (!j.is_object() || !j.contains("id") || !j.contains("visits") || !j["visits"].is_array())
            throw data_error(where() + ": record must be an object with `id` and `visits`");
        detail::RawPatient p;
        p.id = j["id"].get<std::string>();
        if (j["visits"].empty()) throw data_error(where() + ": patient `" + p.id + "` has no visits");
        for (const auto& v : j["visits"]) {
            if (!v.is_object() || !v.contains("dx") || !v.contains("rx"))
                throw data_error(where() + ": visit must carry `dx` and `rx` arrays");
            detail::RawVisit rv;
            for (const auto& c : v["dx"]) {
                std::string raw = c.get<std::string>();
                if (raw.empty()) throw data_error(where() + ": empty diagnosis code string");
                rv.dx.push_back(raw);
                dx_codes.insert(raw);
            }
            for (const auto& c : v["rx"]) {
                std::string raw = c.get<std::string>();
                if (raw.empty()) throw data_error(where() + ": empty medication code string");
                rv.rx.push_back(raw);
                rx_codes.insert(raw);
            }
            if (rv.dx.empty() && rv.rx.empty())
                throw data_error(where() + ": visit with empty diagnosis and medication sets");
            p.visits.push_back(std::move(rv));
        }
        patients.push_back(std::move(p));
    }

    Cohort cohort;
    cohort.dx_vocab.assign(dx_codes.begin(), dx_codes.end());
    cohort.rx_vocab.assign(rx_codes.begin(), rx_codes.end());
    std::map<std::string, std::size_t> dx_index, rx_index;
    for (std::size_t i = 0; i < cohort.dx_vocab.size(); ++i) dx_index[cohort.dx_vocab[i]] = i;
    for (std::size_t i = 0; i < cohort.rx_vocab.size(); ++i) rx_index[cohort.rx_vocab[i]] = i;

    for (const auto& rp : patients) {
        PatientRecord pr;
        pr.id = rp.id;
        for (const auto& rv : rp.visits) {
            Visit v;
            v.dx = detail::to_indices(rv.dx, dx_index);
            v.rx = detail::to_indices(rv.rx, rx_index);
            pr.visits.push_back(std::move(v));
        }
        auto& bucket = pr.visits.size() >= 2 ? cohort.multi_visit : cohort.single_visit;
        bucket.push_back(std::move(pr));
    }
    return cohort;
}

inline void write_records(const Cohort& cohort, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot open records file for writing: " + path);
    auto emit = [&](const PatientRecord& p) {
        nlohmann::json j;
        j["id"] = p.id;
        j["visits"] = nlohmann::json::array();
        for (const auto& v : p.visits) {
            nlohmann::json jv;
            jv["dx"] = nlohmann::json::array();
            jv["rx"] = nlohmann::json::array();
            for (auto i : v.dx) jv["dx"].push_back(cohort.dx_vocab.at(i));
            for (auto i : v.rx) jv["rx"].push_back(cohort.rx_vocab.at(i));
            j["visits"].push_back(std::move(jv));
        }
        out << j.dump() << '\n';
    };
    for (const auto& p : cohort.multi_visit) emit(p);
    for (const auto& p : cohort.single_visit) emit(p);
}

struct DatasetSplit {
    std::vector<std::size_t> train;  // indices into Cohort::multi_visit, each sorted ascending
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

// Patient-level 2/3 : 1/6 : 1/6 partition of the multi-visit cohort.
inline DatasetSplit split_dataset(std::size_t n_multi, std::uint64_t seed) {
    if (n_multi < 6)
        throw config_error("split requires at least 6 multi-visit patients, got " + std::to_string(n_multi));
    Rng rng(seed);
    std::vector<std::size_t> order = rng.permutation(n_multi);
    std::size_t n_train = 2 * n_multi / 3;
    std::size_t n_val = n_multi / 6;
    DatasetSplit s;
    s.train.assign(order.begin(), order.begin() + n_train);
    s.validation.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    s.test.assign(order.begin() + n_train + n_val, order.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.validation.begin(), s.validation.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

// ---------------------------------------------------------------------------
// Synthetic cohorts: each diagnosis maps to a fixed medication subset; a
// visit's medications are the union of its diagnoses' rules, with optional
// per-medication membership noise.

struct SyntheticSpec {
    std::size_t patients_multi = 0;
    std::size_t patients_single = 0;
    std::size_t visits_min = 2, visits_max = 4;        // multi-visit patients
    std::size_t dx_vocab = 0, rx_vocab = 0;
    std::size_t multi_dx_min = 1, multi_dx_max = 3;    // diagnoses per multi-patient visit
    std::size_t single_dx_min = 1, single_dx_max = 3;  // diagnoses per single-patient visit
    std::size_t group_size = 4;                        // hierarchy/rule grouping granularity
    std::map<std::size_t, std::vector<std::size_t>> rules;  // dx index -> rx subset
    double noise = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (rules.empty()) throw config_error("synthetic spec: empty rule table");
        if (dx_vocab == 0 || rx_vocab == 0) throw config_error("synthetic spec: vocabulary sizes must be positive");
        if (patients_multi + patients_single == 0) throw config_error("synthetic spec: zero patients");
        if (visits_min < 2 || visits_max < visits_min)
            throw config_error("synthetic spec: multi-visit range must satisfy 2 <= min <= max");
        if (multi_dx_min < 1 || multi_dx_max < multi_dx_min || multi_dx_max > dx_vocab)
            throw config_error("synthetic spec: diagnoses-per-visit range must satisfy 1 <= min <= max <= dx_vocab");
        if (single_dx_min < 1 || single_dx_max < single_dx_min || single_dx_max > dx_vocab)
            throw config_error("synthetic spec: single-visit diagnosis range must satisfy 1 <= min <= max <= dx_vocab");
        if (noise < 0.0 || noise > 1.0) throw config_error("synthetic spec: noise must lie in [0,1]");
        if (group_size == 0) throw config_error("synthetic spec: group_size must be positive");
        for (std::size_t d = 0; d < dx_vocab; ++d)
            if (!rules.count(d))
                throw config_error("synthetic spec: rule table missing diagnosis index " + std::to_string(d));
        for (const auto& [d, meds] : rules) {
            if (d >= dx_vocab) throw config_error("synthetic spec: rule diagnosis index out of range");
            for (auto m : meds)
                if (m >= rx_vocab) throw config_error("synthetic spec: rule medication index out of range");
        }
    }
};

namespace detail {

inline std::size_t pad_width(std::size_t vocab) {
    std::size_t w = 1, v = vocab > 0 ? vocab - 1 : 0;
    while (v >= 10) v /= 10, ++w;
    return std::max<std::size_t>(w, 3);
}

inline std::string padded(const std::string& prefix, std::size_t i, std::size_t width) {
    std::string digits = std::to_string(i);
    return prefix + std::string(width > digits.size() ? width - digits.size() : 0, '0') + digits;
}

inline std::vector<std::size_t> parse_index_list(const std::string& text) {
    std::vector<std::size_t> out;
    std::istringstream in(text);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        out.push_back(static_cast<std::size_t>(std::stoull(tok)));
    }
    return out;
}

}  // namespace detail

inline std::string synthetic_dx_code(std::size_t i, std::size_t vocab) {
    return detail::padded("D", i, detail::pad_width(vocab));
}
inline std::string synthetic_rx_code(std::size_t i, std::size_t vocab) {
    return detail::padded("M", i, detail::pad_width(vocab));
}

// Rule presets: `identity` ties each diagnosis to its same-index medication
// plus its successor within the group; `group` ties every diagnosis in a
// group to the group's full medication block.
inline std::map<std::size_t, std::vector<std::size_t>> make_rules(const std::string& mode, std::size_t dx_vocab,
                                                                  std::size_t rx_vocab, std::size_t group_size) {
    if (group_size == 0) throw config_error("rule preset: group_size must be positive");
    std::map<std::size_t, std::vector<std::size_t>> rules;
    if (mode == "group") {
        for (std::size_t d = 0; d < dx_vocab; ++d) {
            std::size_t g = d / group_size;
            std::vector<std::size_t> meds;
            for (std::size_t m = g * group_size; m < std::min((g + 1) * group_size, rx_vocab); ++m)
                meds.push_back(m);
            rules[d] = std::move(meds);
        }
    } else if (mode == "identity") {
        for (std::size_t d = 0; d < dx_vocab; ++d) {
            std::size_t g = d / group_size;
            std::size_t lo = g * group_size;
            std::size_t hi = std::min((g + 1) * group_size, rx_vocab);
            std::vector<std::size_t> meds;
            if (d < rx_vocab) meds.push_back(d);
            if (hi > lo) {
                std::size_t next = lo + (d - lo + 1) % (hi - lo);
                if (next < rx_vocab && (meds.empty() || next != meds[0])) meds.push_back(next);
            }
            std::sort(meds.begin(), meds.end());
            rules[d] = std::move(meds);
        }
    } else {
        throw config_error("unknown rule preset: " + mode);
    }
    return rules;
}

// Synthetic-spec file: key-value config, section [synthetic].
//   patients_multi, patients_single, visits_min/max, dx_vocab, rx_vocab,
//   multi_dx_min/max, single_dx_min/max, group_size, noise, seed,
//   rules = identity | group | explicit `0:0,1;1:1,2;...`
inline SyntheticSpec load_synthetic_spec(const Config& cfg) {
    const std::string S = "synthetic";
    SyntheticSpec s;
    s.patients_multi = static_cast<std::size_t>(cfg.get_int_or(S, "patients_multi", 0));
    s.patients_single = static_cast<std::size_t>(cfg.get_int_or(S, "patients_single", 0));
    s.visits_min = static_cast<std::size_t>(cfg.get_int_or(S, "visits_min", 2));
    s.visits_max = static_cast<std::size_t>(cfg.get_int_or(S, "visits_max", 4));
    s.dx_vocab = static_cast<std::size_t>(cfg.get_int(S, "dx_vocab"));
    s.rx_vocab = static_cast<std::size_t>(cfg.get_int(S, "rx_vocab"));
    s.multi_dx_min = static_cast<std::size_t>(cfg.get_int_or(S, "multi_dx_min", 1));
    s.multi_dx_max = static_cast<std::size_t>(cfg.get_int_or(S, "multi_dx_max", 3));
    s.single_dx_min = static_cast<std::size_t>(cfg.get_int_or(S, "single_dx_min", s.multi_dx_min));
    s.single_dx_max = static_cast<std::size_t>(cfg.get_int_or(S, "single_dx_max", s.multi_dx_max));
    s.group_size = static_cast<std::size_t>(cfg.get_int_or(S, "group_size", 4));
    s.noise = cfg.get_double_or(S, "noise", 0.0);
    s.seed = cfg.get_u64_or(S, "seed", 0);
    std::string rules = cfg.get_string_or(S, "rules", "");
    if (rules.empty()) throw config_error("synthetic spec: empty rule table");
    if (rules == "identity" || rules == "group") {
        s.rules = make_rules(rules, s.dx_vocab, s.rx_vocab, s.group_size);
    } else {
        std::istringstream in(rules);
        std::string entry;
        while (std::getline(in, entry, ';')) {
            entry = detail::trim(entry);
            if (entry.empty()) continue;
            auto colon = entry.find(':');
            if (colon == std::string::npos)
                throw config_error("synthetic spec: rule entry `" + entry + "` must look like `dx:rx,rx`");
            std::size_t d = static_cast<std::size_t>(std::stoull(detail::trim(entry.substr(0, colon))));
            s.rules[d] = detail::parse_index_list(entry.substr(colon + 1));
        }
    }
    s.validate();
    return s;
}

inline Cohort generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    Cohort cohort;
    cohort.dx_vocab.resize(spec.dx_vocab);
    cohort.rx_vocab.resize(spec.rx_vocab);
    for (std::size_t i = 0; i < spec.dx_vocab; ++i) cohort.dx_vocab[i] = synthetic_dx_code(i, spec.dx_vocab);
    for (std::size_t i = 0; i < spec.rx_vocab; ++i) cohort.rx_vocab[i] = synthetic_rx_code(i, spec.rx_vocab);

    auto sample_distinct = [&](std::size_t k, std::size_t n) {
        std::vector<std::size_t> pool = rng.permutation(n);
        std::vector<std::size_t> out(pool.begin(), pool.begin() + k);
        std::sort(out.begin(), out.end());
        return out;
    };

    auto make_visit = [&](std::size_t dx_min, std::size_t dx_max) {
        Visit v;
        std::size_t ndx = dx_min + rng.next_index(dx_max - dx_min + 1);
        v.dx = sample_distinct(ndx, spec.dx_vocab);
        std::set<std::size_t> meds;
        for (auto d : v.dx)
            for (auto m : spec.rules.at(d)) meds.insert(m);
        if (spec.noise > 0.0) {
            for (std::size_t m = 0; m < spec.rx_vocab; ++m)
                if (rng.next_double() < spec.noise) {
                    if (meds.count(m)) meds.erase(m);
                    else meds.insert(m);
                }
        }
        v.rx.assign(meds.begin(), meds.end());
        return v;
    };

    std::size_t id_width = detail::pad_width(spec.patients_multi + spec.patients_single);
    std::size_t next_id = 0;
    for (std::size_t p = 0; p < spec.patients_multi; ++p) {
        PatientRecord pr;
        pr.id = detail::padded("P", next_id++, id_width);
        std::size_t nv = spec.visits_min + rng.next_index(spec.visits_max - spec.visits_min + 1);
        for (std::size_t t = 0; t < nv; ++t) pr.visits.push_back(make_visit(spec.multi_dx_min, spec.multi_dx_max));
        cohort.multi_visit.push_back(std::move(pr));
    }
    for (std::size_t p = 0; p < spec.patients_single; ++p) {
        PatientRecord pr;
        pr.id = detail::padded("P", next_id++, id_width);
        pr.visits.push_back(make_visit(spec.single_dx_min, spec.single_dx_max));
        cohort.single_visit.push_back(std::move(pr));
    }
    return cohort;
}

// Toy hierarchy matching the synthetic vocabulary: leaves under per-group
// category nodes under one root, written as child<TAB>parent lines with a
// self-referential root line.
inline void write_synthetic_hierarchy(const std::string& path, CodeKind kind, std::size_t vocab,
                                      std::size_t group_size) {
    if (group_size == 0) throw config_error("hierarchy: group_size must be positive");
    std::ofstream out(path);
    if (!out) throw config_error("cannot open hierarchy file for writing: " + path);
    const char* prefix = kind == CodeKind::Diagnosis ? "D" : "M";
    std::string root = std::string(prefix) + "ROOT";
    std::size_t n_groups = (vocab + group_size - 1) / group_size;
    std::size_t gw = detail::pad_width(n_groups);
    for (std::size_t i = 0; i < vocab; ++i) {
        std::string leaf = kind == CodeKind::Diagnosis ? synthetic_dx_code(i, vocab) : synthetic_rx_code(i, vocab);
        out << leaf << '\t' << detail::padded(std::string(prefix) + "G", i / group_size, gw) << '\n';
    }
    for (std::size_t g = 0; g < n_groups; ++g)
        out << detail::padded(std::string(prefix) + "G", g, gw) << '\t' << root << '\n';
    out << root << '\t' << root << '\n';
}

inline void write_rules(const SyntheticSpec& spec, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot open rules file for writing: " + path);
    for (const auto& [d, meds] : spec.rules) {
        out << synthetic_dx_code(d, spec.dx_vocab);
        for (auto m : meds) out << '\t' << synthetic_rx_code(m, spec.rx_vocab);
        out << '\n';
    }
}

}  // namespace knowaug
