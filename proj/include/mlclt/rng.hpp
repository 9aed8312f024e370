#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace mlclt {

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seed of realization k under a master seed; independent of scheduling.
inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t k)
{
    return splitmix64(master ^ splitmix64(k ^ 0x5851f42d4c957f2dULL));
}

// Engine plus the handful of variates the generators need. All transforms are
// spelled out so that streams are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(splitmix64(seed)) {}

    std::uint64_t bits() { return eng_(); }

    // Uniform on the open interval (0, 1).
    double uniform() { return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53; }

    double rademacher() { return (eng_() >> 63) ? 1.0 : -1.0; }

    double normal()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double r = std::sqrt(-2.0 * std::log(uniform()));
        double t = 2.0 * std::numbers::pi * uniform();
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    // Two-sided exponential with unit variance.
    double laplace()
    {
        double u = uniform() - 0.5;
        double mag = -std::log1p(-2.0 * std::abs(u)) / std::numbers::sqrt2;
        return u < 0 ? -mag : mag;
    }

    double uniform_symmetric_unit_variance() { return std::sqrt(3.0) * (2.0 * uniform() - 1.0); }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace mlclt
