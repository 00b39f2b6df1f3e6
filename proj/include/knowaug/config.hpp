#pragma once

// Flat key-value configuration with [section] headers, plus a stable content
// hash used to stamp run manifests and checkpoints.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "knowaug/errors.hpp"

namespace knowaug {

inline std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

namespace detail {

inline std::string trim(std::string_view s) {
    const char* ws = " \t\r\n";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

class Config {
public:
    Config() = default;

    static Config parse_string(const std::string& text, const std::string& origin = "<string>") {
        Config cfg;
        cfg.origin_ = origin;
        std::istringstream in(text);
        std::string line;
        std::string section;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string t = detail::trim(line);
            if (t.empty() || t[0] == '#') continue;
            if (t.front() == '[') {
                if (t.back() != ']')
                    throw config_error(origin + ":" + std::to_string(lineno) + ": unterminated section header");
                section = detail::trim(std::string_view(t).substr(1, t.size() - 2));
                if (section.empty())
                    throw config_error(origin + ":" + std::to_string(lineno) + ": empty section name");
                continue;
            }
            auto eq = t.find('=');
            if (eq == std::string::npos)
                throw config_error(origin + ":" + std::to_string(lineno) + ": expected `key = value`");
            std::string key = detail::trim(std::string_view(t).substr(0, eq));
            std::string value = detail::trim(std::string_view(t).substr(eq + 1));
            if (key.empty())
                throw config_error(origin + ":" + std::to_string(lineno) + ": empty key");
            if (cfg.values_[section].count(key))
                throw config_error(origin + ":" + std::to_string(lineno) + ": duplicate key `" + key +
                                   "` in section [" + section + "]");
            cfg.values_[section][key] = value;
        }
        return cfg;
    }

    static Config parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw config_error("cannot open config file: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_string(buf.str(), path);
    }

    bool has(const std::string& section, const std::string& key) const {
        auto s = values_.find(section);
        return s != values_.end() && s->second.count(key) > 0;
    }

    const std::string& raw(const std::string& section, const std::string& key) const {
        auto s = values_.find(section);
        if (s != values_.end()) {
            auto k = s->second.find(key);
            if (k != s->second.end()) return k->second;
        }
        throw config_error(origin_ + ": missing key `" + key + "` in section [" + section + "]");
    }

    std::string get_string(const std::string& section, const std::string& key) const { return raw(section, key); }

    std::string get_string_or(const std::string& section, const std::string& key, std::string fallback) const {
        return has(section, key) ? raw(section, key) : std::move(fallback);
    }

    long long get_int(const std::string& section, const std::string& key) const {
        return parse_integral<long long>(section, key, raw(section, key));
    }

    long long get_int_or(const std::string& section, const std::string& key, long long fallback) const {
        return has(section, key) ? get_int(section, key) : fallback;
    }

    std::uint64_t get_u64(const std::string& section, const std::string& key) const {
        return parse_integral<std::uint64_t>(section, key, raw(section, key));
    }

    std::uint64_t get_u64_or(const std::string& section, const std::string& key, std::uint64_t fallback) const {
        return has(section, key) ? get_u64(section, key) : fallback;
    }

    double get_double(const std::string& section, const std::string& key) const {
        const std::string& v = raw(section, key);
        try {
            std::size_t used = 0;
            double d = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw config_error(origin_ + ": key `" + key + "` in section [" + section +
                               "] is not a number: `" + v + "`");
        }
    }

    double get_double_or(const std::string& section, const std::string& key, double fallback) const {
        return has(section, key) ? get_double(section, key) : fallback;
    }

    bool get_bool_or(const std::string& section, const std::string& key, bool fallback) const {
        if (!has(section, key)) return fallback;
        const std::string& v = raw(section, key);
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw config_error(origin_ + ": key `" + key + "` in section [" + section +
                           "] is not a boolean: `" + v + "`");
    }

    void set(const std::string& section, const std::string& key, const std::string& value) {
        values_[section][key] = value;
    }

    std::vector<std::string> sections() const {
        std::vector<std::string> out;
        out.reserve(values_.size());
        for (const auto& [name, _] : values_) out.push_back(name);
        return out;
    }

    std::vector<std::string> keys(const std::string& section) const {
        std::vector<std::string> out;
        auto s = values_.find(section);
        if (s == values_.end()) return out;
        for (const auto& [key, _] : s->second) out.push_back(key);
        return out;
    }

    // Sorted, whitespace-normalized rendering; two configs with equal settings
    // canonicalize identically regardless of source formatting.
    std::string canonical() const {
        std::ostringstream out;
        for (const auto& [section, kv] : values_) {
            out << '[' << section << "]\n";
            for (const auto& [key, value] : kv) out << key << '=' << value << '\n';
        }
        return out.str();
    }

    std::uint64_t hash() const { return fnv1a(canonical()); }

    std::string hash_hex() const {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
        return std::string(buf);
    }

private:
    template <typename T>
    T parse_integral(const std::string& section, const std::string& key, const std::string& v) const {
        T value{};
        auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), value);
        if (ec != std::errc() || ptr != v.data() + v.size())
            throw config_error(origin_ + ": key `" + key + "` in section [" + section +
                               "] is not an integer: `" + v + "`");
        return value;
    }

    std::map<std::string, std::map<std::string, std::string>> values_;
    std::string origin_ = "<empty>";
};

}  // namespace knowaug
