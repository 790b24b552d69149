#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace miniseg {

// Deterministic random source. The generator is std::mt19937_64 (the
// algorithm is fully specified by the standard, so streams are identical
// across platforms); all derived draws below avoid std::*_distribution,
// whose output is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), n > 0. Rejection-free modulo is fine here;
    // bias is negligible for the n used in this project (< 2^32).
    std::uint64_t uniform_int(std::uint64_t n) { return engine_() % n; }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller. The sine branch is discarded so the
    // generator state is a pure function of the draw count.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(6.283185307179586477 * u2);
    }

    // Normal(0, stddev) truncated to +/- 2 stddev by rejection.
    double trunc_normal(double stddev) {
        double z = normal();
        while (std::abs(z) > 2.0) z = normal();
        return z * stddev;
    }

    // Engine state as text, for checkpointing (operator<< of mt19937_64 is
    // standardized as decimal integers).
    std::string save_state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void restore_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
    }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
};

}  // namespace miniseg
