#pragma once

#include <cstdint>
#include <random>

namespace sslab {

/// splitmix64 step; used to derive independent seeds from one master seed.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derive a stream seed from (master, tag) pairs; associative-free on purpose,
/// call order of tags matters.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag) {
    return mix64(master ^ mix64(tag));
}
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag1, std::uint64_t tag2) {
    return derive_seed(derive_seed(master, tag1), tag2);
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace sslab
