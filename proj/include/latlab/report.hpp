#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace latlab {

// Numbers in CSV bodies are printed at 9 significant digits so reruns with
// identical seeds produce byte-identical files.
std::string format_g9(double v);

// Writes header + rows, overwriting. '\n' line endings, no trailing spaces.
void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::string>& rows);

// Appends one row, writing the header first when the file is new or empty.
void append_csv(const std::string& path, const std::string& header, const std::string& row);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// Content hash used as a run identifier (16 hex digits).
std::string run_id_hex(const std::string& canonical_config);

} // namespace latlab
