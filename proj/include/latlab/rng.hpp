#pragma once

#include <cstdint>

namespace latlab {

// Counter-based SplitMix64 stream. The n-th output is a pure function of
// (seed, n), so identical seeds and call sequences give identical samples on
// every platform. Substreams are derived by hashing (seed, index) through the
// same finalizer, which keeps independently seeded workers reproducible
// regardless of scheduling.
//
// next_u64:  mix64(seed + (counter+1) * 0x9E3779B97F4A7C15)
// substream: child seed = mix64(mix64(seed ^ 0x6A09E667F3BCC909) + index * 0x9E3779B97F4A7C15)
//
// normal() uses Box-Muller on two fresh uniforms (the sine half is discarded),
// so one normal always consumes exactly two counter increments.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64();
    // Uniform in [0, 1), 53-bit resolution.
    double uniform();
    // Uniform in (0, 1].
    double uniform_open();
    double normal();
    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n);

    RngStream substream(std::uint64_t index) const;

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }
    static RngStream restore(std::uint64_t seed, std::uint64_t counter) {
        RngStream r(seed);
        r.counter_ = counter;
        return r;
    }

private:
    std::uint64_t seed_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace latlab
