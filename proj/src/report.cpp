#include "latlab/report.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace latlab {

std::string format_g9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::string>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("write_csv: cannot open " + path);
    f << header << '\n';
    for (const auto& r : rows) f << r << '\n';
    if (!f) throw std::runtime_error("write_csv: write failed for " + path);
}

void append_csv(const std::string& path, const std::string& header, const std::string& row) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    std::ofstream f(path, std::ios::app);
    if (!f) throw std::runtime_error("append_csv: cannot open " + path);
    if (fresh) f << header << '\n';
    f << row << '\n';
    if (!f) throw std::runtime_error("append_csv: write failed for " + path);
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::trunc | std::ios::binary);
    if (!f) throw std::runtime_error("write_text_file: cannot open " + path);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw std::runtime_error("write_text_file: write failed for " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_text_file: cannot open " + path);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string run_id_hex(const std::string& canonical_config) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : canonical_config) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace latlab
