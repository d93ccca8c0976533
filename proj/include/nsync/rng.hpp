#pragma once

#include <cstdint>
#include <string_view>

namespace nsync {

// Deterministic stream of draws based on splitmix64. Every consumer of
// randomness owns a named stream derived from a master seed, so adding or
// removing one consumer never shifts the draws seen by another. Reproducibility
// of runs depends on that discipline; derive a fresh stream instead of sharing.
class RandomStream {
  public:
    explicit RandomStream(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform on [0, 1).
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1p-53; }

    // Standard normal via Box-Muller; two uniforms consumed per call, no
    // cached spare, so the draw count per call is fixed.
    double normal();

    // Uniform on {0, ..., n-1}; n must be positive.
    int uniform_int(int n);

  private:
    uint64_t state_;
};

// Child seed for a named stream; optional index for per-item streams.
uint64_t derive_seed(uint64_t master, std::string_view tag);
uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index);

inline RandomStream derive_stream(uint64_t master, std::string_view tag) {
    return RandomStream(derive_seed(master, tag));
}
inline RandomStream derive_stream(uint64_t master, std::string_view tag, uint64_t index) {
    return RandomStream(derive_seed(master, tag, index));
}

}  // namespace nsync
