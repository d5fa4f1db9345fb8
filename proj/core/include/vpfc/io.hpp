#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace vpfc {

/// Writes `contents` to a sibling temporary file, then renames it over `path`.
/// Parent directories are created as needed.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double value);

}  // namespace vpfc
