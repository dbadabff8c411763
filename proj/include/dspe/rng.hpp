#pragma once

// All randomness in the simulator comes from std::mt19937_64, whose output
// sequence is fixed by the C++ standard. Distributions are implemented here
// instead of using <random>'s, whose algorithms are implementation-defined:
//   uniform01: top 53 bits of one draw, scaled by 2^-53
//   normal:    Box-Muller on two uniform01 draws, cosine branch only
//   index(n):  one draw modulo n
// Sub-streams are keyed by mixing (seed, tag) through splitmix64.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace dspe {

constexpr std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag)
{
    return splitmix64(seed ^ splitmix64(tag));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double normal()
    {
        const double u1 = 1.0 - uniform01(); // (0, 1]
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t index(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }

private:
    std::mt19937_64 engine_;
};

} // namespace dspe
