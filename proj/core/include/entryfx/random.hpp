#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace entryfx {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; a good bijective scrambler for seed fan-out.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Stable 64-bit FNV-1a hash of a byte string.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

/// Child seed for replicate `index` of a run seeded with `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept;

/// Child seed for a named stage/stream.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) noexcept;

/// Uniform integer in [0, n) without relying on library-specific
/// distribution algorithms, so streams are stable across standard libraries.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

/// Uniform double in [0, 1) with 53 random bits.
double uniform01(Rng& rng);

/// Standard normal draw (Marsaglia polar method, no cached spare).
double standard_normal(Rng& rng);

/// +1 or -1 with equal probability.
inline double rademacher(Rng& rng) { return (rng() >> 63) != 0 ? 1.0 : -1.0; }

/// Fisher-Yates shuffle driven by `uniform_index`.
template <typename It>
void shuffle(It first, It last, Rng& rng) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
        const auto j = uniform_index(rng, i);
        std::swap(first[i - 1], first[j]);
    }
}

}  // namespace entryfx
