#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace qmed {

// Deterministic sampling on top of mt19937_64. The <random> distribution
// classes are implementation-defined, so every draw here is mapped from raw
// engine bits by hand; traces stay reproducible across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform() < p; }

    double exponential(double mean) {
        // inverse CDF; log1p(-u) with u in [0,1) keeps the argument finite
        return -mean * std::log1p(-uniform());
    }

    // standard normal via basic Box-Muller (second value discarded)
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(6.283185307179586476925286766559 * u2);
    }

    // lognormal parameterized by its median; sigma 0 degenerates to the
    // median, median 0 degenerates to no delay at all
    double lognormal(double median, double sigma) {
        if (median <= 0.0) return 0.0;
        if (sigma <= 0.0) return median;
        return median * std::exp(sigma * normal());
    }

private:
    std::mt19937_64 gen_;
};

inline std::uint64_t hash_mix(std::uint64_t h, std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    return h;
}

inline std::uint64_t hash_mix(std::uint64_t h, std::string_view s) {
    std::uint64_t fnv = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        fnv ^= c;
        fnv *= 0x100000001b3ULL;
    }
    return hash_mix(h, fnv);
}

}  // namespace qmed
