#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

#include "glp/matrix.hpp"

namespace glp {

namespace detail {
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}
}  // namespace detail

/// Counter-based PRNG (splitmix64): output k is a pure function of
/// (seed, k), so identical seed + identical call sequence reproduces the
/// stream bit-for-bit across runs and platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64() {
        counter_ += 0x9E3779B97F4A7C15ull;
        return detail::mix64(seed_ ^ counter_);
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; generates pairs, caches the spare.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    /// Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        GLP_REQUIRE(n > 0, "Rng::below: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    /// Independent named stream derived from this seed; the parent stream
    /// is not advanced.
    Rng substream(std::string_view name) const {
        std::uint64_t h = 0xCBF29CE484222325ull;
        for (char ch : name) {
            h ^= static_cast<unsigned char>(ch);
            h *= 0x100000001B3ull;
        }
        return Rng(detail::mix64(seed_ ^ detail::mix64(h)));
    }

    Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev = 1.0) {
        Matrix m(rows, cols);
        for (double& v : m.data) v = stddev * normal();
        return m;
    }

    Matrix uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi) {
        Matrix m(rows, cols);
        for (double& v : m.data) v = uniform(lo, hi);
        return m;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace glp
