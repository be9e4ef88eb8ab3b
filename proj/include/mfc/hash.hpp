#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mfc {

// Hex-encoded SHA-256.
std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::filesystem::path& path);

// Hash of a directory tree: sorted relative paths, each combined with the
// hash of its content. Stable across platforms for identical file bytes.
std::string sha256_dir(const std::filesystem::path& dir);

}  // namespace mfc
