#pragma once

#include <cstdint>
#include <limits>

namespace rach {

/*
 * Counter-based generator: the i-th output is a keyed SplitMix64 finalizer
 * applied to the counter, so any stream can be reproduced from (key, counter)
 * and independent child streams are derived with split().
 *
 * Satisfies UniformRandomBitGenerator. The helpers below do not go through
 * <random> distributions, so draws are bit-identical across standard libraries.
 */
class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit CounterRng(std::uint64_t seed = 0, std::uint64_t stream = 0) noexcept
        : key_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ULL))), counter_(0)
    {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept
    {
        ++counter_;
        return mix(key_ + kGolden * counter_);
    }

    // Child stream `i`. Children of one parent never share a key with each
    // other or with the parent (up to 64-bit collisions).
    CounterRng split(std::uint64_t i) const noexcept
    {
        CounterRng child;
        child.key_ = mix(key_ ^ mix(i * 0xd1342543de82ef95ULL + 0x9e3779b97f4a7c15ULL));
        child.counter_ = 0;
        return child;
    }

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) noexcept
    {
        // Lemire's multiply-shift with rejection.
        std::uint64_t x = (*this)();
        __uint128_t m = static_cast<__uint128_t>(x) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                x = (*this)();
                m = static_cast<__uint128_t>(x) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    bool bernoulli(double p) noexcept { return uniform() < p; }

private:
    static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept
    {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_;
};

} // namespace rach
