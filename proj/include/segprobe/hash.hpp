#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace segprobe {

/// Lowercase hex SHA-256 of a byte buffer.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view text);

/// Streams the file; throws std::runtime_error if it cannot be read.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace segprobe
