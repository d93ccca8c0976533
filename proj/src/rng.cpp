#include "nsync/rng.hpp"

#include <cmath>

#include "nsync/common.hpp"
#include "nsync/hash.hpp"

namespace nsync {

double RandomStream::normal() {
    // u1 in (0, 1] keeps the log finite.
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1p-53;
    double u2 = static_cast<double>(next_u64() >> 11) * 0x1p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

int RandomStream::uniform_int(int n) {
    NSYNC_CHECK_NUM(n > 0, "uniform_int needs positive n, got ", n);
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
}

namespace {
uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}
}  // namespace

uint64_t derive_seed(uint64_t master, std::string_view tag) {
    return mix64(master ^ fnv1a64(tag));
}

uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index) {
    return mix64(derive_seed(master, tag) ^ mix64(index + 0x9e3779b97f4a7c15ull));
}

}  // namespace nsync
