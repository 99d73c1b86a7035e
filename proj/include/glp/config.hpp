#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "glp/check.hpp"

namespace glp {

/// Usage mistakes (bad flags, malformed config, missing inputs); the CLI maps
/// these to exit code 1 and everything else thrown to exit code 2.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

using ConfigMap = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace detail

/// `key = value` lines; `#` starts a comment anywhere; blank lines ignored.
inline ConfigMap parse_config_text(const std::string& text) {
    ConfigMap out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError("config line " + std::to_string(line_no) +
                             ": expected `key = value`, got: " + line);
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty())
            throw UsageError("config line " + std::to_string(line_no) + ": empty key");
        if (value.empty())
            throw UsageError("config line " + std::to_string(line_no) +
                             ": empty value for key `" + key + "`");
        if (!out.emplace(key, value).second)
            throw UsageError("config line " + std::to_string(line_no) +
                             ": duplicate key `" + key + "`");
    }
    return out;
}

inline ConfigMap read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw UsageError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

/// FNV-1a over the canonical `key=value\n` serialization, as 16 hex chars.
inline std::string config_hash(const ConfigMap& values) {
    std::uint64_t h = 14695981039346656037ULL;
    auto eat = [&](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [key, value] : values) {
        eat(key);
        eat("=");
        eat(value);
        eat("\n");
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Settings resolved from defaults <- config file <- command-line flags.
struct RunConfig {
    ConfigMap values;

    std::string hash() const { return config_hash(values); }

    const std::string& str(const std::string& key) const {
        auto it = values.find(key);
        GLP_REQUIRE(it != values.end(), "config key not declared: " + key);
        return it->second;
    }

    std::uint64_t u64(const std::string& key) const {
        const std::string& v = str(key);
        std::size_t used = 0;
        unsigned long long parsed = 0;
        try {
            parsed = std::stoull(v, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (v.empty() || used != v.size() || v[0] == '-')
            throw UsageError("config key `" + key + "`: expected a non-negative integer, got `" +
                             v + "`");
        return parsed;
    }

    double dbl(const std::string& key) const {
        const std::string& v = str(key);
        std::size_t used = 0;
        double parsed = 0.0;
        try {
            parsed = std::stod(v, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (v.empty() || used != v.size())
            throw UsageError("config key `" + key + "`: expected a number, got `" + v + "`");
        return parsed;
    }

    bool boolean(const std::string& key) const {
        const std::string& v = str(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw UsageError("config key `" + key + "`: expected true/false, got `" + v + "`");
    }

    /// A required path-like setting; empty default means the user must set it.
    const std::string& path(const std::string& key) const {
        const std::string& v = str(key);
        if (v.empty()) throw UsageError("required setting missing: " + key);
        return v;
    }

    std::string canonical_text() const {
        std::string out;
        for (const auto& [key, value] : values) out += key + " = " + value + "\n";
        return out;
    }
};

/// Overlay file and flag settings onto the subcommand's defaults; keys absent
/// from the defaults are unknown and rejected.
inline RunConfig resolve_config(const ConfigMap& defaults, const ConfigMap& file,
                                const ConfigMap& flags) {
    RunConfig cfg;
    cfg.values = defaults;
    for (const ConfigMap* layer : {&file, &flags})
        for (const auto& [key, value] : *layer) {
            auto it = cfg.values.find(key);
            if (it == cfg.values.end()) throw UsageError("unknown config key: " + key);
            it->second = value;
        }
    return cfg;
}

/// Echo the resolved settings into the output directory for provenance.
inline void write_resolved_config(const std::string& dir, const RunConfig& cfg) {
    const std::string path = dir + "/config.resolved";
    std::ofstream out(path);
    GLP_REQUIRE(out.good(), "cannot write " + path);
    out << "# config_hash = " << cfg.hash() << "\n" << cfg.canonical_text();
    GLP_REQUIRE(out.good(), "write failed: " + path);
}

}  // namespace glp
