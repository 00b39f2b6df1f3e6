#pragma once

// Artifact persistence: binary embedding matrices with a source tag, named
// parameter checkpoints stamped with a config hash, and the text logs and
// manifests each pipeline stage emits. Binary layouts are native-endian
// 64-bit doubles; artifacts are byte-identical across reruns.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "knowaug/adam.hpp"
#include "knowaug/emr.hpp"
#include "knowaug/encoders.hpp"
#include "knowaug/errors.hpp"
#include "knowaug/matrix.hpp"
#include "knowaug/predictor.hpp"

namespace knowaug {

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

inline std::uint32_t read_u32(std::istream& in, const std::string& path) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) throw data_error(path + ": truncated file");
    return v;
}

inline std::uint64_t read_u64(std::istream& in, const std::string& path) {
    std::uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 8)) throw data_error(path + ": truncated file");
    return v;
}

inline void write_doubles(std::ostream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline void read_doubles(std::istream& in, std::vector<double>& v, const std::string& path) {
    if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double))))
        throw data_error(path + ": truncated matrix payload");
}

inline std::string fmt_full(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

inline constexpr char kEmbeddingMagic[8] = {'K', 'A', 'U', 'G', 'E', 'M', 'B', '1'};
inline constexpr char kCheckpointMagic[8] = {'K', 'A', 'U', 'G', 'C', 'K', 'P', 'T'};

inline void save_embeddings(const NodeEmbeddings& emb, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open embedding file for writing: " + path);
    out.write(kEmbeddingMagic, 8);
    detail::write_u32(out, static_cast<std::uint32_t>(emb.source));
    detail::write_u64(out, emb.rows.rows);
    detail::write_u64(out, emb.rows.cols);
    detail::write_doubles(out, emb.rows.data);
}

inline NodeEmbeddings load_embeddings(const std::string& path, const std::string& producer_hint = "") {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        std::string msg = "missing embedding file: " + path;
        if (!producer_hint.empty()) msg += "; produce it with `" + producer_hint + "`";
        throw config_error(msg);
    }
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kEmbeddingMagic, 8) != 0)
        throw data_error(path + ": not an embedding file (bad magic)");
    NodeEmbeddings emb;
    std::uint32_t tag = detail::read_u32(in, path);
    if (tag > 2) throw data_error(path + ": unknown embedding source tag");
    emb.source = static_cast<EmbeddingSource>(tag);
    std::uint64_t rows = detail::read_u64(in, path);
    std::uint64_t cols = detail::read_u64(in, path);
    emb.rows = Matrix(rows, cols, 0.0);
    detail::read_doubles(in, emb.rows.data, path);
    if (!emb.rows.all_finite()) throw data_error(path + ": non-finite embedding rows");
    return emb;
}

inline void save_embeddings_text(const NodeEmbeddings& emb, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot open embedding text file for writing: " + path);
    for (std::size_t i = 0; i < emb.rows.rows; ++i) {
        out << i;
        for (std::size_t j = 0; j < emb.rows.cols; ++j) out << '\t' << detail::fmt_full(emb.rows(i, j));
        out << '\n';
    }
}

inline void save_checkpoint(const ParamStore& params, std::uint64_t config_hash, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open checkpoint for writing: " + path);
    out.write(kCheckpointMagic, 8);
    detail::write_u64(out, config_hash);
    detail::write_u32(out, static_cast<std::uint32_t>(params.count()));
    for (const auto& [name, m] : params.items()) {
        detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u64(out, m.rows);
        detail::write_u64(out, m.cols);
        detail::write_doubles(out, m.data);
    }
}

struct Checkpoint {
    std::uint64_t config_hash = 0;
    ParamStore params;
};

inline Checkpoint load_checkpoint(const std::string& path, const std::string& producer_hint = "") {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        std::string msg = "missing checkpoint: " + path;
        if (!producer_hint.empty()) msg += "; produce it with `" + producer_hint + "`";
        throw config_error(msg);
    }
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw data_error(path + ": not a checkpoint file (bad magic)");
    Checkpoint ck;
    ck.config_hash = detail::read_u64(in, path);
    std::uint32_t n = detail::read_u32(in, path);
    for (std::uint32_t i = 0; i < n; ++i) {
        std::uint32_t len = detail::read_u32(in, path);
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw data_error(path + ": truncated parameter name");
        std::uint64_t rows = detail::read_u64(in, path);
        std::uint64_t cols = detail::read_u64(in, path);
        Matrix m(rows, cols, 0.0);
        detail::read_doubles(in, m.data, path);
        ck.params.add(name, std::move(m));
    }
    return ck;
}

// ---------------------------------------------------------------------------
// Text logs

inline void write_loss_log(const std::vector<double>& objective_per_epoch, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot open loss log for writing: " + path);
    for (std::size_t i = 0; i < objective_per_epoch.size(); ++i)
        out << (i + 1) << '\t' << detail::fmt_full(objective_per_epoch[i]) << '\n';
}

inline void write_metrics_log(const std::vector<EpochMetrics>& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot open metrics log for writing: " + path);
    out << "epoch\tsplit\tjaccard\tf1\tprauc\n";
    for (const auto& e : log)
        out << e.epoch << '\t' << e.split << '\t' << detail::fmt_full(e.row.jaccard) << '\t'
            << detail::fmt_full(e.row.f1) << '\t' << detail::fmt_full(e.row.prauc) << '\n';
}

inline void write_splits(const Cohort& cohort, const DatasetSplit& split, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot open splits file for writing: " + path);
    auto emit = [&](const std::vector<std::size_t>& idx, const char* name) {
        for (auto i : idx) out << cohort.multi_visit.at(i).id << '\t' << name << '\n';
    };
    emit(split.train, "train");
    emit(split.validation, "validation");
    emit(split.test, "test");
}

inline DatasetSplit load_splits(const Cohort& cohort, const std::string& path,
                                const std::string& producer_hint = "") {
    std::ifstream in(path);
    if (!in) {
        std::string msg = "missing splits file: " + path;
        if (!producer_hint.empty()) msg += "; produce it with `" + producer_hint + "`";
        throw config_error(msg);
    }
    std::map<std::string, std::size_t> index_by_id;
    for (std::size_t i = 0; i < cohort.multi_visit.size(); ++i) index_by_id[cohort.multi_visit[i].id] = i;
    DatasetSplit split;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw data_error(path + ":" + std::to_string(lineno) + ": expected id<TAB>split");
        std::string id = line.substr(0, tab);
        std::string name = detail::trim(line.substr(tab + 1));
        auto it = index_by_id.find(id);
        if (it == index_by_id.end())
            throw data_error(path + ":" + std::to_string(lineno) + ": unknown multi-visit patient " + id);
        if (name == "train") split.train.push_back(it->second);
        else if (name == "validation") split.validation.push_back(it->second);
        else if (name == "test") split.test.push_back(it->second);
        else throw data_error(path + ":" + std::to_string(lineno) + ": unknown split " + name);
    }
    return split;
}

// Stage manifest. The timestamp field is the one permitted source of
// rerun-to-rerun variation among artifacts.
inline void write_manifest(const std::string& command, std::uint64_t config_hash, std::uint64_t seed,
                           const std::vector<std::string>& inputs, const std::vector<std::string>& outputs,
                           const std::string& path) {
    nlohmann::json j;
    j["command"] = command;
    j["config_hash"] = [&] {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash));
        return std::string(buf);
    }();
    j["seed"] = seed;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["timestamp"] = static_cast<std::uint64_t>(std::time(nullptr));
    std::ofstream out(path);
    if (!out) throw config_error("cannot open manifest for writing: " + path);
    out << j.dump(2) << '\n';
}

}  // namespace knowaug
