#pragma once

#include <cstdint>
#include <random>

namespace regcert {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Independent generator for stream `n` of `seed`. Streams do not depend on
/// the order in which they are created.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t n, std::uint64_t domain = 0) {
    return std::mt19937_64(splitmix64(splitmix64(seed ^ (domain * 0xD1B54A32D192ED03ULL)) + n));
}

/// Uniform draw in the closed interval [lo, hi]; lo == hi returns lo.
inline double uniform(std::mt19937_64 &rng, double lo, double hi) {
    const double u = std::generate_canonical<double, 53>(rng);
    return lo + (hi - lo) * u;
}

} // namespace regcert
