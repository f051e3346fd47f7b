#pragma once

#include <cstdint>
#include <random>

namespace dseg {

// Seed-deterministic generator. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard; the distributions below are written out
// by hand because the standard library ones are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, bound).
    std::uint64_t below(std::uint64_t bound);
    // Integer in [lo, hi], inclusive.
    std::int64_t range(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
    }
    bool bernoulli(double p) { return uniform() < p; }
    // Standard normal via Box-Muller, one draw per call.
    double normal();

private:
    std::mt19937_64 engine_;
};

// SplitMix64 finalizer; used to derive independent per-item seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    return mix_seed(mix_seed(mix_seed(base) ^ a) ^ b);
}

}  // namespace dseg
