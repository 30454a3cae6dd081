#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace tgpt {

/// Counter-based splittable generator.
///
/// Each draw hashes (key, counter) through the SplitMix64 finalizer, so a
/// stream is fully described by two integers and `split` derives independent
/// child streams without touching the parent. Distributions are implemented
/// here instead of via <random> so sequences are identical across standard
/// library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x6a09e667f3bcc908ULL)) {}

    std::uint64_t next_u64() { return mix(key_ ^ mix(counter_++ + 0x9e3779b97f4a7c15ULL)); }

    /// Independent child stream; does not advance this stream.
    [[nodiscard]] Rng split(std::uint64_t stream) const {
        Rng child;
        child.key_ = mix(key_ + mix(stream ^ 0xbb67ae8584caa73bULL));
        return child;
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (one variate per call, no cached pair).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Uniform integer in [0, n). Rejection sampling removes modulo bias.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t r = next_u64();
        while (r >= limit) {
            r = next_u64();
        }
        return r % n;
    }

    template <class T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace tgpt
