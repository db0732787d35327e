#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace ilora {

// Counter-based deterministic generator (splitmix64 over seed-offset counter).
// Identical seed gives an identical stream on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), counter_(0) {}

    // Independent substream, e.g. per-user candidate sampling.
    Rng derive(std::uint64_t stream) const {
        return Rng(mix(seed_ ^ 0x94d049bb133111ebULL, stream));
    }

    std::uint64_t next_u64() { return mix(seed_, counter_++); }

    // uniform in [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) {
        // n is tiny relative to 2^64 in this artifact; modulo bias is negligible
        // but we reject to keep the stream exactly uniform anyway.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    double next_gaussian(double mean = 0.0, double stddev = 1.0) {
        // Box-Muller, one value per draw pair to keep the stream simple.
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double z = std::sqrt(-2.0 * std::log(u1)) *
                         std::cos(2.0 * std::numbers::pi * u2);
        return mean + stddev * z;
    }

    std::uint64_t seed() const { return seed_; }

private:
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t counter) {
        std::uint64_t z = seed + counter * 0x9e3779b97f4a7c15ULL + 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t counter_;
};

}  // namespace ilora
