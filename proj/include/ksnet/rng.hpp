#pragma once

#include <cmath>
#include <cstdint>

#include "ksnet/common.hpp"

namespace ksnet {

/// Deterministic 64-bit PRNG (splitmix64). Pure integer arithmetic, so the
/// same seed yields the same sequence on every platform and build. Each
/// consumer (initialization, shuffling, augmentation, synthetic data) owns
/// its own engine; streams are derived with fork() so adding a draw in one
/// place never shifts another.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0,1) with 53 bits of mantissa.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t next_below(std::uint64_t n) {
        KSNET_CHECK(n > 0, Error, "Rng::next_below: n must be positive");
        // Modulo bias is < 2^-40 for every n used here (n << 2^64).
        return next_u64() % n;
    }

    /// Standard normal via Box-Muller (deterministic: consumes exactly two draws).
    double normal() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        constexpr double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    /// Derives an independent stream keyed by `stream`.
    Rng fork(std::uint64_t stream) const {
        Rng r(state_ ^ (0xD1B54A32D192ED03ULL * (stream + 1)));
        r.next_u64();
        return r;
    }

private:
    std::uint64_t state_;
};

}  // namespace ksnet
