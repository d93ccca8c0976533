#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace nsync {

// FNV-1a. Content fingerprinting only, not collision-resistant.
uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ull);
uint64_t fnv1a64(std::string_view s);

// Hash of the file's raw bytes, formatted as 16 hex digits. Throws ConfigError
// if the file cannot be read.
std::string hash_file_hex(const std::string& path);

std::string hex64(uint64_t v);

}  // namespace nsync
