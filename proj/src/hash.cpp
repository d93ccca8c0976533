#include "nsync/hash.hpp"

#include <cstdio>
#include <fstream>
#include <vector>

#include "nsync/common.hpp"

namespace nsync {

uint64_t fnv1a64(const void* data, size_t n, uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string hash_file_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    NSYNC_CHECK(in.good(), "cannot open file for hashing: ", path);
    uint64_t h = 0xcbf29ce484222325ull;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h = fnv1a64(buf.data(), static_cast<size_t>(in.gcount()), h);
    }
    return hex64(h);
}

}  // namespace nsync
