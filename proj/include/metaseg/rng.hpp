// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace metaseg {

// splitmix64 step; also used as the mixing finalizer for seed derivation.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Deterministic seed fan-out: every stochastic component derives its seed
// from (base seed, component name, indices). FNV-1a over the name bytes,
// splitmix-mixed so nearby indices give unrelated streams.
inline uint64_t seed_fold(uint64_t base, std::string_view name) {
    uint64_t h = base ^ 0xcbf29ce484222325ull;
    for (unsigned char c : name) h = (h ^ c) * 0x100000001b3ull;
    uint64_t s = h;
    return splitmix64(s);
}

inline uint64_t seed_fold(uint64_t base, uint64_t v) {
    uint64_t s = base ^ (v + 0x9e3779b97f4a7c15ull);
    return splitmix64(s);
}

template <typename First, typename... Rest>
    requires(sizeof...(Rest) >= 1)
uint64_t seed_fold(uint64_t base, First first, Rest... rest) {
    return seed_fold(seed_fold(base, first), rest...);
}

// Small deterministic PRNG. Hand-rolled draws so sequences are identical
// across platforms and standard-library versions.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive range, multiply-shift bounded draw
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1u;
        const uint64_t r = static_cast<uint64_t>(
            (static_cast<__uint128_t>(next_u64()) * span) >> 64);
        return lo + static_cast<int64_t>(r);
    }

    bool coin() { return (next_u64() >> 63) != 0; }

    // Box-Muller without caching: two draws per value, fixed consumption.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    uint64_t state_;
};

} // namespace metaseg
