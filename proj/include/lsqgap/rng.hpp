#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace lsqgap {

// SplitMix64 finalizer. Full 64-bit avalanche, so nearby keys give
// statistically independent streams.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Counter-based generator keyed by (seed, stream). Every stream is a pure
// function of its key, so draws can be produced in any order and in parallel
// while staying bit-reproducible.
class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t stream)
        : state_(mix64(seed ^ (0xD1342543DE82EF95ULL * (stream + 1)))) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1]; safe as a log() argument.
    double next_double_open() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

    std::uint64_t next_below(std::uint64_t bound) { return next_u64() % bound; }

    // Box-Muller; hand-rolled so streams are identical across standard libraries.
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u = next_double_open();
        const double v = next_double();
        const double mag = std::sqrt(-2.0 * std::log(u));
        spare_ = mag * std::sin(6.283185307179586476925286766559 * v);
        have_spare_ = true;
        return mag * std::cos(6.283185307179586476925286766559 * v);
    }

    // Floyd's algorithm: uniform k-subset of {0, ..., d-1}, no rejection.
    std::vector<int> sample_subset(int d, int k) {
        std::vector<int> chosen;
        chosen.reserve(static_cast<std::size_t>(k));
        for (int j = d - k; j < d; ++j) {
            const int t = static_cast<int>(next_below(static_cast<std::uint64_t>(j) + 1));
            bool present = false;
            for (int c : chosen) {
                if (c == t) { present = true; break; }
            }
            chosen.push_back(present ? j : t);
        }
        return chosen;
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Stream id for replicate r of an experiment keyed by seed; replicates draw
// from disjoint streams regardless of execution order.
inline std::uint64_t replicate_seed(std::uint64_t seed, std::uint64_t replicate) {
    return mix64(seed ^ (0xA24BAED4963EE407ULL * (replicate + 1)));
}

// Order-insensitive compensated accumulator (Neumaier). Used wherever the
// aggregation order is pinned by contract.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

}  // namespace lsqgap
