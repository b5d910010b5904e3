#pragma once

#include <cstdint>
#include <cmath>

namespace sspl {

/// Deterministic, platform-independent random stream (xoshiro256** seeded via
/// splitmix64). Streams are splittable: `Rng(seed, index)` yields the same
/// sequence on every platform for the same (seed, index) key, so samples can
/// be generated out of order or in parallel without changing their content.
class Rng {
public:
    explicit Rng(uint64_t seed, uint64_t stream = 0) {
        uint64_t sm = seed + stream * 0x9E3779B97F4A7C15ULL;
        for (auto& w : s_) w = splitmix64(sm);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), n >= 1. Masked rejection sampling keeps the
    /// result bit-exact regardless of platform integer width quirks.
    uint64_t uniform_int(uint64_t n) {
        if (n <= 1) return 0;
        uint64_t mask = n - 1;
        mask |= mask >> 1;
        mask |= mask >> 2;
        mask |= mask >> 4;
        mask |= mask >> 8;
        mask |= mask >> 16;
        mask |= mask >> 32;
        uint64_t x;
        do {
            x = next_u64() & mask;
        } while (x >= n);
        return x;
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller. Consumes exactly two uniforms per call;
    /// no cached spare, so the consumption pattern is state-free.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    static uint64_t splitmix64(uint64_t& state) {
        uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4];
};

} // namespace sspl
