#include "latlab/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace latlab {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace

ConfigFile ConfigFile::parse_text(const std::string& text) {
    ConfigFile cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::runtime_error("config: malformed section header at line " +
                                         std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            cfg.sections[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: expected key = value at line " +
                                     std::to_string(lineno));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::runtime_error("config: empty key at line " + std::to_string(lineno));
        cfg.sections[section][key] = value;
    }
    return cfg;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_text(text);
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
    const auto s = sections.find(section);
    return s != sections.end() && s->second.count(key) > 0;
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key,
                                   const std::string& fallback) const {
    const auto s = sections.find(section);
    if (s == sections.end()) return fallback;
    const auto it = s->second.find(key);
    return it == s->second.end() ? fallback : it->second;
}

std::uint64_t ConfigFile::get_u64(const std::string& section, const std::string& key,
                                  std::uint64_t fallback) const {
    if (!has(section, key)) return fallback;
    return std::stoull(get_string(section, key, ""));
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
    if (!has(section, key)) return fallback;
    return std::stod(get_string(section, key, ""));
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = get_string(section, key, "");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::runtime_error("config: bad boolean value for " + key + ": " + v);
}

std::vector<std::size_t> ConfigFile::get_list(const std::string& section, const std::string& key,
                                              const std::vector<std::size_t>& fallback) const {
    if (!has(section, key)) return fallback;
    std::vector<std::size_t> out;
    std::istringstream in(get_string(section, key, ""));
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(std::stoull(item));
    }
    return out;
}

void ConfigFile::check_known(const std::string& section, const std::set<std::string>& known) const {
    const auto s = sections.find(section);
    if (s == sections.end()) return;
    for (const auto& [key, value] : s->second) {
        (void)value;
        if (!known.count(key))
            throw std::runtime_error("config: unknown key '" + key + "' in section [" + section +
                                     "]");
    }
}

void ConfigFile::check_known_all(const std::map<std::string, std::set<std::string>>& known) const {
    for (const auto& [section, kv] : sections) {
        (void)kv;
        const auto it = known.find(section);
        if (it == known.end())
            throw std::runtime_error("config: unknown section [" + section + "]");
        check_known(section, it->second);
    }
}

} // namespace latlab
