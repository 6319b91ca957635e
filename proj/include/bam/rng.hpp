// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace bam {

/// FNV-1a 64-bit hash. Used for config digests, checkpoint checksums and
/// deriving independent RNG substreams from string tags.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

/// Counter-based pseudo-random generator (splitmix64). The i-th output is a
/// pure function of (seed, i), so streams for distinct trials/tags are
/// reproducible regardless of scheduling order. Fully portable: no
/// libstdc++ distribution objects are involved anywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    /// Derive an independent stream keyed by a tag. fork("a") and fork("b")
    /// of the same generator never overlap in practice.
    Rng fork(std::string_view tag) const {
        std::uint64_t h = fnv1a64(tag, state_ ^ 0x9e3779b97f4a7c15ull);
        return Rng(mix(h));
    }

    Rng fork(std::uint64_t tag) const {
        return Rng(mix(state_ ^ mix(tag + 0x632be59bd9b4e019ull)));
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix(state_);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    /// Uniform integer in [0, n). n must be positive.
    std::size_t next_index(std::size_t n) {
        // 128-bit multiply keeps the map unbiased enough for sampling use.
        return static_cast<std::size_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Standard normal via Box-Muller (one value per call, no caching so the
    /// stream position stays a simple function of the call count).
    double next_gaussian() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(6.283185307179586476925286766559 * u2);
    }

    std::uint64_t state() const { return state_; }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t state_;
};

}  // namespace bam
