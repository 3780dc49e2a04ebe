// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

namespace graphormer {

// Seeded generator; all randomness in the project flows through this so runs
// are reproducible bit for bit.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }

    // Truncated at two standard deviations, the usual transformer init.
    double truncated_normal(double stddev) {
        for (;;) {
            const double z = normal(0.0, 1.0);
            if (z >= -2.0 && z <= 2.0) return z * stddev;
        }
    }

    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) { // inclusive
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

} // namespace graphormer
