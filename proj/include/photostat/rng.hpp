#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace photostat {

// Deterministic, portable random numbers. The generator is xoshiro256++
// (Blackman & Vigna) seeded through SplitMix64; substreams for parallel
// blocks are derived by folding the block id into the SplitMix64 state.
// All samplers below consume the stream in a fixed, documented order so a
// given (seed, config) pair reproduces byte-identical output everywhere.

class SplitMix64 {
  public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

  private:
    std::uint64_t state_;
};

class Xoshiro256pp {
  public:
    explicit Xoshiro256pp(std::uint64_t seed) {
        SplitMix64 sm(seed);
        for (auto& s : state_) s = sm.next();
    }

    /// Independent generator for a parallel block or resample index.
    static Xoshiro256pp substream(std::uint64_t seed, std::uint64_t stream) {
        SplitMix64 sm(seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
        Xoshiro256pp rng(sm.next());
        return rng;
    }

    std::uint64_t next() {
        std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform double in (0, 1), safe as a log() argument.
    double uniform_open() {
        double u = uniform01();
        return u > 0.0 ? u : 0x1.0p-53;
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t state_[4];
};

/// Standard normal via Box-Muller (two uniforms per draw, no cached spare).
inline double sample_normal(Xoshiro256pp& rng) {
    double u1 = rng.uniform_open();
    double u2 = rng.uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Poisson by CDF inversion (sequential search); falls back to a rounded
/// normal approximation for very large means where the exact recurrence
/// underflows.
inline std::uint64_t sample_poisson(Xoshiro256pp& rng, double mean) {
    if (mean <= 0.0) return 0;
    if (mean > 500.0) {
        double v = mean + std::sqrt(mean) * sample_normal(rng);
        return v < 0.0 ? 0 : static_cast<std::uint64_t>(std::llround(v));
    }
    double u = rng.uniform01();
    double p = std::exp(-mean);
    double cdf = p;
    std::uint64_t k = 0;
    while (u > cdf && k < 100000) {
        ++k;
        p *= mean / static_cast<double>(k);
        cdf += p;
    }
    return k;
}

/// Bose-Einstein (geometric on {0,1,...}) with the given mean:
/// P(n) = mean^n / (1+mean)^(n+1).
inline std::uint64_t sample_bose_einstein(Xoshiro256pp& rng, double mean) {
    if (mean <= 0.0) return 0;
    double u = rng.uniform_open();
    double r = std::log(u) / std::log(mean / (1.0 + mean));
    if (r >= 1e18) return static_cast<std::uint64_t>(1e18);
    return static_cast<std::uint64_t>(r);
}

/// Binomial(n, p). Small n uses Bernoulli draws; moderate n*p uses CDF
/// inversion; large n*p a clamped normal approximation (bootstrap-scale
/// accuracy, not used on any exactness-critical path).
inline std::uint64_t sample_binomial(Xoshiro256pp& rng, std::uint64_t n, double p) {
    if (n == 0 || p <= 0.0) return 0;
    if (p >= 1.0) return n;
    if (n <= 64) {
        std::uint64_t k = 0;
        for (std::uint64_t i = 0; i < n; ++i)
            if (rng.uniform01() < p) ++k;
        return k;
    }
    double np = static_cast<double>(n) * p;
    if (p > 0.5) return n - sample_binomial(rng, n, 1.0 - p);
    if (np <= 50.0) {
        double u = rng.uniform01();
        double q = 1.0 - p;
        double pk = std::pow(q, static_cast<double>(n)); // P(0)
        double cdf = pk;
        std::uint64_t k = 0;
        while (u > cdf && k < n) {
            ++k;
            pk *= (static_cast<double>(n - k + 1) / static_cast<double>(k)) * (p / q);
            cdf += pk;
        }
        return k;
    }
    double v = np + std::sqrt(np * (1.0 - p)) * sample_normal(rng);
    if (v < 0.0) return 0;
    std::uint64_t k = static_cast<std::uint64_t>(std::llround(v));
    return k > n ? n : k;
}

} // namespace photostat
