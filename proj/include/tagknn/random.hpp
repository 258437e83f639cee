#pragma once

// Portable seeded randomness. std::mt19937_64's output sequence is fixed by the
// standard but the <random> distributions are not, so everything that must be
// bit-reproducible across standard libraries draws through these helpers.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace tagknn {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        // Rejection sampling removes modulo bias.
        const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    /// Uniform double in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double normal() {
        // Box-Muller; the sine branch is discarded to keep the stream stateless.
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    /// Knuth's multiplication method; fine for the small means used here.
    std::uint64_t poisson(double mean) {
        const double limit = std::exp(-mean);
        std::uint64_t k = 0;
        double p = uniform();
        while (p > limit) {
            ++k;
            p *= uniform();
        }
        return k;
    }

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    /// Index drawn proportionally to `cumulative` (inclusive prefix sums, last > 0).
    std::size_t weighted(std::span<const double> cumulative);

private:
    std::mt19937_64 engine_;
};

inline std::size_t Rng::weighted(std::span<const double> cumulative) {
    const double target = uniform() * cumulative.back();
    std::size_t lo = 0, hi = cumulative.size() - 1;
    while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (cumulative[mid] > target)
            hi = mid;
        else
            lo = mid + 1;
    }
    return lo;
}

}  // namespace tagknn
