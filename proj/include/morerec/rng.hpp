#pragma once

#include <cstdint>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace morerec {

// 64-bit FNV-1a, used to fold strings into seed material.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Mixes a master seed with an arbitrary list of tags (strings or integers)
/// into a derived seed. Same inputs always give the same output, so every
/// component can carve an independent stream out of one master seed.
inline std::uint64_t mix_seed(std::uint64_t seed) { return seed; }

template <typename T, typename... Rest>
std::uint64_t mix_seed(std::uint64_t seed, const T& tag, const Rest&... rest) {
    std::uint64_t t;
    if constexpr (std::is_convertible_v<T, std::string_view>) {
        t = fnv1a64(std::string_view(tag));
    } else {
        t = static_cast<std::uint64_t>(tag);
    }
    std::uint64_t s = seed ^ (t + 0x9E3779B97F4A7C15ULL + (seed << 6) + (seed >> 2));
    std::uint64_t st = s;
    return mix_seed(splitmix64(st), rest...);
}

/// Deterministic PRNG with the handful of draws the pipeline needs.
/// All distributions are implemented here so results do not depend on the
/// standard library's <random> distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x853C49E6748FEA9BULL) {
        // warm up so nearby seeds decorrelate
        for (int i = 0; i < 4; ++i) splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    /// Uniform double in [0, 1) with 53 random bits.
    double u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform index in [0, n). Rejection-sampled, exactly uniform.
    std::size_t index(std::size_t n) {
        if (n == 0) throw std::invalid_argument("Rng::index: n must be > 0");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return static_cast<std::size_t>(x % n);
    }

    /// Standard normal via Box-Muller. Stateless per call (pairs are not cached).
    double normal() {
        double u1 = u01();
        while (u1 <= 0.0) u1 = u01();
        const double u2 = u01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

    /// Draws one index with probability proportional to weights[i].
    std::size_t pick_weighted(const std::vector<double>& weights) {
        double total = std::accumulate(weights.begin(), weights.end(), 0.0);
        if (!(total > 0.0)) throw std::invalid_argument("Rng::pick_weighted: weights must sum > 0");
        double r = u01() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (r < acc) return i;
        }
        return weights.size() - 1;
    }

private:
    std::uint64_t state_;
};

}  // namespace morerec
