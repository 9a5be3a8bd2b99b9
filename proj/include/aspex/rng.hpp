#pragma once

#include <cstdint>
#include <random>

namespace aspex {

// Explicit mappings from mt19937_64 draws; keeps every sampled value
// identical across standard-library implementations.
inline double uniform_double(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline uint64_t uniform_index(std::mt19937_64& rng, uint64_t n) {
    // rejection sampling over the largest multiple of n
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
        v = rng();
    } while (v >= limit);
    return v % n;
}

}  // namespace aspex
