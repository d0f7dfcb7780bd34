#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace sensiq {

// xoshiro256++ seeded through splitmix64. The integer stream is defined by
// integer arithmetic only, so a given seed reproduces the same sequence on
// every platform; real-valued draws map that stream through IEEE-754 ops.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64();

    // Uniform in [0, 1), 53-bit resolution.
    double uniform();

    // Standard normal via the Marsaglia polar method (one spare cached).
    double gaussian();

    // Gamma(shape, 1) via Marsaglia-Tsang squeeze, boosted for shape < 1.
    double gamma(double shape);

    // Chi-square with dof degrees of freedom (dof > 0, not necessarily
    // integer).
    double chi_square(double dof);

private:
    std::array<std::uint64_t, 4> state_{};
    std::uint64_t seed_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Folds a role tag into a base seed so different roles ("calib", "deploy",
// per-trial indices) get disjoint streams.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

}  // namespace sensiq
