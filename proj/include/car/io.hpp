#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace car::io {

// Shortest-exact decimal form used in every CSV we write ("%.17g").
std::string format_double(double x);

// Strict parse of a full field; throws FormatError on trailing garbage.
double parse_double(std::string_view field);
long long parse_int(std::string_view field);

std::vector<std::string_view> split(std::string_view line, char sep = ',');

// Writes atomically enough for our purposes (truncate + write). Throws IoError
// naming the path on failure. Parent directories are created.
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace car::io
