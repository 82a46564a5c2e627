// Copyright 2026 The restora Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef RESTORA_PRNG_HPP_
#define RESTORA_PRNG_HPP_

#include <cmath>
#include <cstdint>
#include <string_view>

namespace restora {

// splitmix64 finalizer (Steele/Lea/Flood). Bijective 64-bit mixer.
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t hash_combine64(std::uint64_t h, std::uint64_t k) {
    return mix64(h ^ (k + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Stream-derivation hashes. Distinct labels give independent streams.
inline std::uint64_t hash64(std::uint64_t seed, std::uint64_t a) {
    return hash_combine64(mix64(seed), a);
}
inline std::uint64_t hash64(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return hash_combine64(hash64(seed, a), b);
}
inline std::uint64_t hash64(std::uint64_t seed, std::string_view label) {
    return hash_combine64(mix64(seed), fnv1a64(label));
}
inline std::uint64_t hash64(std::uint64_t seed, std::string_view label, std::uint64_t a) {
    return hash_combine64(hash64(seed, label), a);
}

// Counter-based generator: the i-th output is splitmix64(seed + i*phi).
// Reproducible across runs and platforms; no global state anywhere.
class Prng {
public:
    explicit Prng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix64(state_);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    int uniform_int(int lo, int hi) {
        if (hi <= lo) return lo;
        std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    // Box-Muller, two fresh uniforms per draw (no cached spare, so the
    // stream position is a pure function of the number of calls).
    double normal() {
        double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Independent child stream.
    Prng fork(std::string_view label) const { return Prng(hash64(state_, label)); }

private:
    std::uint64_t state_;
};

} // namespace restora

#endif // RESTORA_PRNG_HPP_
