#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "flowalign/errors.hpp"

namespace flowalign {

// Deterministic RNG. Distributions are implemented here instead of with
// std::*_distribution because only the raw mt19937_64 stream is pinned by the
// standard; the distribution adapters differ between standard libraries and
// would break bit-exact reproducibility.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(mix(seed)) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller. No cached spare: one value per call keeps
    // the stream positional and fork-friendly.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    void fill_normal(std::span<double> out) {
        for (double& v : out) {
            v = normal();
        }
    }

    std::vector<double> normal_vec(size_t n) {
        std::vector<double> v(n);
        fill_normal(v);
        return v;
    }

    uint64_t below(uint64_t n) { return next_u64() % n; }

    // Index draw proportional to nonnegative weights (need not be normalized).
    size_t categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) {
            if (w < 0.0) {
                throw ContractError("categorical: negative weight");
            }
            total += w;
        }
        if (!(total > 0.0)) {
            throw ContractError("categorical: weights sum to zero");
        }
        const double u = uniform() * total;
        double cum = 0.0;
        for (size_t i = 0; i + 1 < weights.size(); ++i) {
            cum += weights[i];
            if (u < cum) {
                return i;
            }
        }
        return weights.size() - 1;
    }

    // Keyed substream derived from this generator's original seed. Forking does
    // not consume state: the same keys always address the same stream, which is
    // what per-(iteration, condition, index) reproducibility needs.
    Rng fork(uint64_t a, uint64_t b = 0, uint64_t c = 0) const {
        uint64_t h = mix(seed_ ^ 0x9e3779b97f4a7c15ULL);
        h = mix(h ^ a);
        h = mix(h ^ b);
        h = mix(h ^ c);
        return Rng(h);
    }

    // Sequential substream: consumes one draw, so repeated splits differ.
    Rng split() { return Rng(mix(next_u64() ^ 0xd1b54a32d192ed03ULL)); }

    uint64_t seed() const { return seed_; }

    // splitmix64 finalizer
    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
};

}  // namespace flowalign
