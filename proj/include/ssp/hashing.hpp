#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace ssp {

// Hex SHA-256 digests. `short_hash` keeps the first 16 hex digits, which is
// what file names and report rows carry.
std::string sha256_hex(std::string_view bytes);
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_file(const std::filesystem::path& path);
std::string short_hash(std::string_view bytes);

}  // namespace ssp
