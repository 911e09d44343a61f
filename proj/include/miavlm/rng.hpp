#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace miavlm {

/// splitmix64 finalizer; used to derive decorrelated seed streams.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_string(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Deterministic sub-seed for a named stream, e.g. derive_seed(seed, "camera", v).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0) {
    return mix64(seed ^ mix64(hash_string(stream)) ^ mix64(index + 0x51ed270b2fULL));
}

/// Uniform draw in [0, n) via modulo; bias is irrelevant at our scales and
/// the mapping stays identical across standard library implementations.
inline std::size_t bounded(std::mt19937_64& rng, std::size_t n) {
    return static_cast<std::size_t>(rng() % n);
}

/// Fisher-Yates with explicit draws (std::shuffle is not pinned across
/// standard libraries).
template <typename T>
void shuffle_inplace(std::vector<T>& items, std::mt19937_64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = bounded(rng, i);
        std::swap(items[i - 1], items[j]);
    }
}

/// A permutation of 0..n-1 drawn with shuffle_inplace.
inline std::vector<std::size_t> random_permutation(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    shuffle_inplace(p, rng);
    return p;
}

}  // namespace miavlm
