#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "fedfluence/errors.hpp"

namespace fedfluence {

// Fixed-algorithm PRNG (xoshiro256++ seeded through splitmix64). All
// randomness in the library flows through explicit seeds and this engine,
// so identical seeds give identical streams on every platform.

inline std::uint64_t splitmix64_step(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Stream labels used when deriving child seeds, so unrelated draws can
// never collide even when the user passes small integer seeds.
enum class SeedStream : std::uint64_t {
    participant_selection = 0x5E1EC7F0ULL,
    gradient_sampling     = 0x6A2D5A3FULL,
    model_init            = 0x1B17A11CULL,
    data_global           = 0xDA7A61B1ULL,
    data_client           = 0xDA7AC11EULL,
    data_test             = 0xDA7A7E57ULL,
    experiment            = 0xE8856E3DULL,
    oracle_subset         = 0x0AC1E5B5ULL,
};

inline std::uint64_t derive_seed(std::uint64_t base, SeedStream stream,
                                 std::initializer_list<std::uint64_t> path = {}) {
    std::uint64_t s = base ^ 0x8CB4C3A1F5D2E96FULL;
    splitmix64_step(s);
    s ^= static_cast<std::uint64_t>(stream) * 0xD6E8FEB86659FD93ULL;
    splitmix64_step(s);
    for (std::uint64_t token : path) {
        s ^= (token + 0x632BE59BD9B4E019ULL) * 0xFF51AFD7ED558CCDULL;
        splitmix64_step(s);
    }
    return splitmix64_step(s);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64_step(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform double in [0, 1) with 53 bits of precision.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw IndexError("Rng::below: n must be positive");
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller; one deviate per call, no cached state.
    double normal() {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    double lognormal(double mu, double sigma) { return std::exp(mu + sigma * normal()); }

    // Marsaglia-Tsang gamma sampler; the alpha < 1 case uses the usual
    // boost G(alpha) = G(alpha + 1) * U^(1/alpha).
    double gamma(double alpha) {
        if (alpha <= 0.0) throw ConfigError("Rng::gamma: alpha must be positive");
        if (alpha < 1.0) {
            const double u = std::max(uniform01(), 1e-300);
            return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = uniform01();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    std::vector<double> dirichlet(double alpha, int k) {
        std::vector<double> p(static_cast<std::size_t>(k));
        double total = 0.0;
        for (auto& v : p) { v = gamma(alpha); total += v; }
        for (auto& v : p) v /= total;
        return p;
    }

    // Sample `count` distinct integers from [0, n), returned in ascending order.
    std::vector<int> sample_without_replacement(int n, int count) {
        if (count < 0 || count > n)
            throw ConfigError("sample_without_replacement: count out of range");
        std::vector<int> pool(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
        for (int i = 0; i < count; ++i) {
            const int j = i + static_cast<int>(below(static_cast<std::uint64_t>(n - i)));
            std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
        }
        std::vector<int> picked(pool.begin(), pool.begin() + count);
        std::sort(picked.begin(), picked.end());
        return picked;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4];
};

} // namespace fedfluence
