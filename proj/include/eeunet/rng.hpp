#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace eeunet {

// Deterministic RNG used project-wide. mt19937_64 has a standardized bit
// stream, and the distribution transforms below are written out by hand
// because the std::*_distribution algorithms are implementation-defined;
// this keeps seeded runs bit-identical across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), n >= 1. Modulo bias is negligible for the
    // small n used here (fold sizes, pixel coordinates).
    uint64_t uniform_index(uint64_t n) { return gen_() % n; }

    // Standard normal via Box-Muller (one value per call, no caching, so a
    // fixed call count always consumes a fixed number of engine draws).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Fisher-Yates; std::shuffle is implementation-defined.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace eeunet
