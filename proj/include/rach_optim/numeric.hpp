#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <algorithm>
#include <string>
#include <thread>
#include <vector>

namespace rach {

using Mask = std::uint64_t;

inline int popcount(Mask m) noexcept { return std::popcount(m); }
inline int lowest_bit(Mask m) noexcept { return std::countr_zero(m); }

// Neumaier's variant of Kahan summation.
class CompensatedSum {
public:
    void add(double v) noexcept
    {
        const double t = sum_ + v;
        if (std::abs(sum_) >= std::abs(v))
            comp_ += (sum_ - t) + v;
        else
            comp_ += (v - t) + sum_;
        sum_ = t;
    }
    CompensatedSum& operator+=(double v) noexcept { add(v); return *this; }
    double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

// Worker cap from RACH_OPTIM_THREADS, defaulting to the hardware concurrency.
inline unsigned max_threads()
{
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (const char* env = std::getenv("RACH_OPTIM_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) return static_cast<unsigned>(v);
    }
    return hw;
}

// Runs fn(i) for i in [0, n) on up to max_threads() workers. Each index is
// handled exactly once; callers write results into per-index slots so the
// outcome does not depend on scheduling.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn)
{
    const std::size_t workers = std::min<std::size_t>(max_threads(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace rach
