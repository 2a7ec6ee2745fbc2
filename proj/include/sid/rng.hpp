#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace sid {

// Deterministic random source. Distribution transforms are implemented here
// rather than with std::*_distribution (whose output is implementation
// defined), so a given seed produces the same stream on every platform.
class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be > 0.
    uint64_t uniform_int(uint64_t n) {
        return static_cast<uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller. Consumes two uniforms per call.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Independent substream k of a run seeded with `seed`.
    static Rng fork(uint64_t seed, uint64_t k) {
        uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (k + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return Rng(z ^ (z >> 31));
    }

  private:
    std::mt19937_64 engine_;
};

}  // namespace sid
