#pragma once

#include <cstdint>
#include <random>

namespace afb {

/// Seeded generator with reproducible sub-streams.
///
/// `stream(i)` derives an independent generator from the root seed and an
/// index, so per-item draws do not depend on evaluation order.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix(seed)) {}

    std::uint64_t seed() const noexcept { return seed_; }

    Rng stream(std::uint64_t index) const { return Rng(mix(seed_ ^ mix(index + 0x51ed270b27a3c9d1ULL))); }

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::uint64_t next() { return engine_(); }

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept
    {
        // splitmix64 finalizer
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

} // namespace afb
