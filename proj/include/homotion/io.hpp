#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

namespace homotion::io {

// DataError on missing file or parse failure.
nlohmann::json read_json(const std::filesystem::path& path);
// Creates parent directories. Output is indented by 2 and newline-terminated.
void write_json(const std::filesystem::path& path, const nlohmann::json& value);
// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace homotion::io
