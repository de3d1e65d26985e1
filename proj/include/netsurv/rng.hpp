// Counter-based pseudo-random generator with derivable substreams.
//
// Simulation replicates and bootstrap resamples run concurrently; seeding
// through derived substreams keeps every draw independent of scheduling.
// The generator is splitmix64 evaluated as a pure function of
// (key, counter), so streams can be recreated from (seed, labels) alone.

#pragma once

#include <cmath>
#include <cstdint>

namespace netsurv {

namespace detail {

inline constexpr std::uint64_t golden_gamma = 0x9e3779b97f4a7c15ULL;

inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace detail

class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed)
        : key_(detail::mix64(seed + detail::golden_gamma)) {}

    // Child stream; independent of how many values the parent has produced.
    CounterRng derive(std::uint64_t stream) const {
        CounterRng child(0);
        child.key_ = detail::mix64(key_ ^ detail::mix64(stream * 0xd1b54a32d192ed03ULL + 0x8bb84b93962eacc9ULL));
        child.counter_ = 0;
        return child;
    }

    std::uint64_t next_u64() {
        counter_ += detail::golden_gamma;
        return detail::mix64(key_ + counter_);
    }

    // Strictly inside (0,1): 53-bit mantissa offset by half an ulp.
    double uniform01() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    bool bernoulli(double p) { return uniform01() < p; }

    // Mean parameterization: P(X > t) = exp(-t/mean).
    double exponential(double mean) { return -mean * std::log(uniform01()); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Multiply-shift rejection-free mapping; bias < 2^-64, irrelevant here.
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace netsurv
