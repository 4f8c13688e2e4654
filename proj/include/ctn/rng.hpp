#pragma once

#include <cstdint>
#include <random>

namespace ctn {

// Deterministic RNG wrapper. Every stochastic component owns one of these;
// child generators are derived by seed mixing so parallel consumers never
// share or race on a stream.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

    double gaussian(double mean = 0.0, double stddev = 1.0) {
        std::normal_distribution<double> d(mean, stddev);
        return d(gen_);
    }

    double uniform(double lo = 0.0, double hi = 1.0) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(gen_);
    }

    // Inclusive bounds.
    int uniform_int(int lo, int hi) {
        std::uniform_int_distribution<int> d(lo, hi);
        return d(gen_);
    }

    std::mt19937_64& engine() { return gen_; }

    uint64_t seed() const { return seed_; }

    // splitmix64 finalizer; decorrelates child seeds from (seed, stream id).
    static uint64_t mix(uint64_t a, uint64_t b) {
        uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    Rng child(uint64_t stream) const { return Rng(mix(seed_, stream)); }

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
};

}  // namespace ctn
