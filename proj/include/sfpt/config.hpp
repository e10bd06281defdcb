#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sfpt/error.hpp"

namespace sfpt {

/// One `key = value` entry with its source line (0 for overrides).
struct ConfigEntry {
    std::string key;
    std::string value;
    std::size_t line = 0;
};

namespace detail {
inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}
}  // namespace detail

/// Line-based `key = value` text. `#` starts a comment; blank lines are ignored.
inline std::vector<ConfigEntry> parse_config(std::istream& in) {
    std::vector<ConfigEntry> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ParseError("expected 'key = value'", n);
        ConfigEntry e{detail::trim(std::string_view(t).substr(0, eq)), detail::trim(std::string_view(t).substr(eq + 1)), n};
        if (e.key.empty()) throw ParseError("empty key", n);
        out.push_back(std::move(e));
    }
    return out;
}

inline std::vector<ConfigEntry> load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config '" + path + "'");
    return parse_config(f);
}

/// Typed conversions that report the offending entry.
inline double config_double(const ConfigEntry& e) {
    double v = 0;
    const auto* end = e.value.data() + e.value.size();
    const auto [p, ec] = std::from_chars(e.value.data(), end, v);
    if (ec != std::errc{} || p != end) throw ParseError("'" + e.key + "' expects a number", e.line);
    return v;
}

inline long long config_int(const ConfigEntry& e) {
    long long v = 0;
    const auto* end = e.value.data() + e.value.size();
    const auto [p, ec] = std::from_chars(e.value.data(), end, v);
    if (ec != std::errc{} || p != end) throw ParseError("'" + e.key + "' expects an integer", e.line);
    return v;
}

inline bool config_bool(const ConfigEntry& e) {
    if (e.value == "true" || e.value == "1") return true;
    if (e.value == "false" || e.value == "0") return false;
    throw ParseError("'" + e.key + "' expects true or false", e.line);
}

inline std::vector<int> config_int_list(const ConfigEntry& e) {
    std::vector<int> out;
    std::stringstream ss(e.value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(static_cast<int>(config_int({e.key, detail::trim(item), e.line})));
    }
    return out;
}

/// 64-bit FNV-1a, used for configuration fingerprints.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace sfpt
