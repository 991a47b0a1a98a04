#pragma once

#include <cstdint>

namespace s2d {

// Counter-based generator: the i-th variate is a pure function of
// (seed, i), so a stream can be replayed or forked without storing
// state beyond the counter. Mixing is splitmix64 applied to
// seed ^ golden-ratio-scrambled counter.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : seed_(seed), counter_(0) {}

    uint64_t next_u64() { return mix(seed_, counter_++); }

    // Uniform in [0, 1) with 53 random bits.
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    uint64_t seed() const { return seed_; }
    uint64_t counter() const { return counter_; }

    static uint64_t mix(uint64_t seed, uint64_t counter) {
        uint64_t z = seed ^ (counter * 0x9e3779b97f4a7c15ULL + 0xd1b54a32d192ed03ULL);
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    uint64_t seed_;
    uint64_t counter_;
};

}  // namespace s2d
