#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

// Small helpers shared by every plain-text file format in the toolkit
// (UTF-8, LF line endings, comma-separated fields).
namespace madeval::text {

// Shortest representation that round-trips bit-exactly.
std::string format_double(double value);

double parse_double(std::string_view field, std::string_view context);
std::int64_t parse_int(std::string_view field, std::string_view context);

std::vector<std::string_view> split(std::string_view line, char sep = ',');

// Splits at the first `limit - 1` separators; the last field keeps the rest.
std::vector<std::string_view> split_n(std::string_view line, std::size_t limit, char sep = ',');

std::string_view trim(std::string_view s);

std::string read_file(const std::filesystem::path& path);

// Lines without their terminators. A trailing "\r" is stripped.
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Write to a sibling temporary file, fsync, then rename over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace madeval::text
