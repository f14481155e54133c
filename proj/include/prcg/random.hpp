#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "prcg/errors.hpp"

namespace prcg {

/// splitmix64 finalizer, used to derive independent seeds from (master, index).
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/**
 * Seeded random stream.
 *
 * The engine is std::mt19937_64, whose output sequence is fixed by the
 * standard. The uniform and normal transforms are implemented here rather
 * than taken from <random>, whose distribution algorithms vary between
 * standard library vendors.
 */
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed = 0) : engine_(mix_seed(seed)) {}

    /// Stream for a labelled child (model index, shard index, ...) of a master seed.
    static RandomStream derive(std::uint64_t master, std::uint64_t label) {
        return RandomStream(mix_seed(master) ^ mix_seed(label + 0x5851F42D4C957F2DULL));
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        if (n == 0) throw UsageError("RandomStream::index called with n = 0");
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return static_cast<std::size_t>(x % bound);
    }

    /// Standard normal draw (Box-Muller, one value per call).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    friend bool operator==(const RandomStream& a, const RandomStream& b) { return a.engine_ == b.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace prcg
