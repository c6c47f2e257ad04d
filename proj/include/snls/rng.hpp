#pragma once

#include <cmath>
#include <cstdint>

namespace snls {

// Counter-based randomness built on the SplitMix64 finalizer. Every draw is a
// pure function of (key, counter), so streams can be split arbitrarily across
// ensemble members, noise modes and refinement levels without shared state,
// and results do not depend on evaluation order or thread count.

inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Key for the stream identified by (seed, a, b); e.g. (master seed, member, mode).
inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::uint64_t k = mix64(seed ^ 0xD1B54A32D192ED03ull);
    k = mix64(k ^ (a * 0x8CB92BA72F3D8DD7ull + 0x2545F4914F6CDD1Dull));
    k = mix64(k ^ (b * 0xDA942042E4DD58B5ull + 0xCA01F9DDE3D4BB21ull));
    return k;
}

inline std::uint64_t counter_bits(std::uint64_t key, std::uint64_t counter) {
    return mix64(key + counter * 0x9E3779B97F4A7C15ull);
}

// Uniform on (0,1); never returns 0 or 1, so log() below is safe.
inline double uniform01(std::uint64_t key, std::uint64_t counter) {
    return (double(counter_bits(key, counter) >> 11) + 0.5) * 0x1.0p-53;
}

// Standard normal draw i of stream `key` (Box-Muller, cosine branch).
inline double gaussian(std::uint64_t key, std::uint64_t counter) {
    const double u1 = uniform01(key, 2 * counter);
    const double u2 = uniform01(key, 2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
}

}  // namespace snls
