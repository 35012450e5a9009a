#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace fadsicl {

// Portable seeded randomness. Every random draw in the library flows through
// this stack so that runs reproduce bit-for-bit across platforms; the C++
// standard distributions are deliberately avoided (their output is
// implementation-defined).
//
// Seeding recipe:
//   stream seed  = splitmix(splitmix(run_seed ^ fnv1a64(label)) ^ index)
//   xoshiro256** state = four successive SplitMix64 outputs of the stream seed
// Labels are short ASCII names such as "sampling", "demo-order",
// "modulator-init".

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Derives a substream seed from a run seed, a stream label and an index.
inline std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view label,
                                 std::uint64_t index = 0) {
    std::uint64_t s = run_seed ^ fnv1a64(label);
    std::uint64_t mixed = splitmix64(s);
    std::uint64_t t = mixed ^ index;
    return splitmix64(t);
}

// xoshiro256** 1.0 (Blackman & Vigna), seeded via SplitMix64.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
    }

    static Rng stream(std::uint64_t run_seed, std::string_view label, std::uint64_t index = 0) {
        return Rng(derive_seed(run_seed, label, index));
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Unbiased integer in [0, n) via Lemire's multiply-with-rejection.
    std::uint64_t uniform_below(std::uint64_t n) {
        __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                m = static_cast<__uint128_t>(next_u64()) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller (cached second variate).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = uniform_below(i);
            using std::swap;
            swap(items[i - 1], items[j]);
        }
    }

    // First m entries of a partial Fisher-Yates over [0, n); selection order
    // is itself part of the random draw.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t m) {
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        const std::size_t take = m < n ? m : n;
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t j = i + uniform_below(n - i);
            std::swap(pool[i], pool[j]);
        }
        pool.resize(take);
        return pool;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4] = {};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace fadsicl
