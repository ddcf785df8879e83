/*
 * Copyright (c) The Cellfuse Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#ifndef CELLFUSE_RNG_HPP
#define CELLFUSE_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace cellfuse {

/// Deterministic random stream. std::mt19937_64 supplies the raw bits; the
/// uniform and normal mappings are spelled out here because the standard
/// distribution adaptors are implementation-defined and would break
/// cross-platform reproducibility of seeded runs.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1): 53 mantissa bits.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via Box-Muller. Consumes two uniforms per pair and
    /// caches the second value, so draw counts are platform-independent.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // Shift into (0, 1] so the log argument is never zero.
        double u1 = static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
        double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Uniform integer in [0, n). Rejection-free modulo is biased for huge n;
    /// n here is always far below 2^32 so the bias is irrelevant, but use
    /// Lemire-style rejection anyway to keep the stream well-defined.
    std::uint64_t below(std::uint64_t n) {
        std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            std::uint64_t x = engine_();
            if (x >= threshold) return x % n;
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// Mixes (master seed, stream index) into an independent child seed.
/// SplitMix64 finalizer; avalanche quality is enough to decorrelate streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Seeded in-place Fisher-Yates shuffle (std::shuffle is
/// implementation-defined; this one is pinned).
template <typename T>
void deterministic_shuffle(std::vector<T>& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace cellfuse

#endif
