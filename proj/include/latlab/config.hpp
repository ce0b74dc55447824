#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace latlab {

// Sectioned key = value configuration files. '#' starts a comment; keys
// outside any [section] land in the "" section. Consumers reject unknown
// keys via check_known().
struct ConfigFile {
    std::map<std::string, std::map<std::string, std::string>> sections;

    static ConfigFile parse_text(const std::string& text);
    static ConfigFile parse_file(const std::string& path);

    bool has(const std::string& section, const std::string& key) const;
    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const;
    std::uint64_t get_u64(const std::string& section, const std::string& key,
                          std::uint64_t fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    // Comma-separated unsigned list.
    std::vector<std::size_t> get_list(const std::string& section, const std::string& key,
                                      const std::vector<std::size_t>& fallback) const;

    // Throws naming the first key not in `known` for the given section.
    void check_known(const std::string& section, const std::set<std::string>& known) const;
    // Same over all sections: map section -> allowed keys.
    void check_known_all(const std::map<std::string, std::set<std::string>>& known) const;
};

} // namespace latlab
