#pragma once

#include "voxsr/types.hpp"

namespace voxsr {

// splitmix64 finalizer. Used wherever a value has to be hashed into a seed.
inline u64 mix64(u64 z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline u64 hash_combine(u64 a, u64 b) { return mix64(a ^ (mix64(b) + 0x9E3779B97F4A7C15ull)); }

// Small deterministic generator. std::mt19937 would do for the engine, but the
// standard distributions are implementation-defined, so uniform/normal draws
// are spelled out here to keep every seeded artifact bit-reproducible.
struct SplitMix64 {
    u64 state = 0;

    SplitMix64() = default;
    explicit SplitMix64(u64 seed) : state(seed) {}

    u64 next() {
        state += 0x9E3779B97F4A7C15ull;
        u64 z = state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n), unbiased
    u64 below(u64 n) {
        if (n == 0) return 0;
        u64 threshold = (0 - n) % n;
        for (;;) {
            u64 r = next();
            if (r >= threshold) return r % n;
        }
    }

    i64 range_int(i64 lo, i64 hi) {  // inclusive bounds
        return lo + static_cast<i64>(below(static_cast<u64>(hi - lo + 1)));
    }

    // Box-Muller; u1 in (0,1] avoids log(0).
    double normal() {
        double u1 = (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53;
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }
};

}  // namespace voxsr
