#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "tagkit/common.hpp"

namespace tagkit {

// Deterministic PRNG (splitmix64 core). All randomness in the pipeline flows
// from one global seed through named sub-streams, e.g.
// Rng(seed).stream("subsample").stream(problem_id). Distributions are
// implemented here rather than with <random> so that outputs do not depend on
// the standard library version.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ull) {}

    Rng stream(std::string_view name) const {
        return Rng(fnv1a64(name, state_ * 0xbf58476d1ce4e5b9ull + 1));
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, bound), bound > 0. Rejection sampling keeps it unbiased.
    std::uint64_t next_below(std::uint64_t bound) {
        const std::uint64_t limit = ~0ull - (~0ull % bound);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % bound;
    }

    // Uniform in [0, 1) with 53 bits of precision.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller.
    double next_normal() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    // First k elements of a uniform random permutation, order preserved by
    // selection position.
    template <typename T>
    std::vector<T> sample(const std::vector<T>& items, std::size_t k) {
        std::vector<T> pool = items;
        if (k >= pool.size()) return pool;
        for (std::size_t i = 0; i < k; ++i) {
            std::size_t j = i + static_cast<std::size_t>(next_below(pool.size() - i));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(k);
        return pool;
    }

private:
    std::uint64_t state_;
};

}  // namespace tagkit
