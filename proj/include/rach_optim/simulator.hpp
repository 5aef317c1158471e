#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "activity.hpp"
#include "errors.hpp"
#include "numeric.hpp"
#include "policy.hpp"
#include "rng.hpp"

namespace rach {

struct SimResult {
    std::uint64_t slots = 0;
    double mean = 0.0; // successes per slot
    double sd = 0.0;   // sample standard deviation of per-slot successes
    double half_width = 0.0;
    std::vector<double> preamble_success; // per-preamble successes per slot
    std::uint64_t seed = 0;
};

// Fills `active` with the devices active in one slot.
using ActivitySource = std::function<void(CounterRng&, std::vector<int>&)>;

inline ActivitySource activity_source(const JointActivityDistribution& d)
{
    std::vector<double> cdf(d.size());
    double acc = 0.0;
    for (std::size_t m = 0; m < d.size(); ++m) cdf[m] = acc += d.prob(m);
    return [cdf = std::move(cdf)](CounterRng& rng, std::vector<int>& active) {
        const double u = rng.uniform() * cdf.back();
        auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        if (it == cdf.end()) --it;
        Mask x = static_cast<Mask>(it - cdf.begin());
        active.clear();
        for (; x; x &= x - 1) active.push_back(lowest_bit(x));
    };
}

inline ActivitySource activity_source(const GroupActivityModel& model)
{
    model.validate();
    return [model](CounterRng& rng, std::vector<int>& active) {
        active.clear();
        const int size = model.group_size();
        for (int g = 0; g < model.groups; ++g)
            if (rng.bernoulli(model.active_prob))
                for (int k = g * size; k < (g + 1) * size; ++k) active.push_back(k);
    };
}

// Draws stored samples uniformly with replacement.
inline ActivitySource activity_source(const SampleSet& samples)
{
    return [&samples](CounterRng& rng, std::vector<int>& active) {
        samples.active_devices(rng.below(samples.size()), active);
    };
}

namespace detail {

struct SlotStats {
    std::uint64_t count = 0;
    double mean = 0.0;
    double m2 = 0.0;
    std::vector<std::uint64_t> hits;

    void add(double v)
    {
        ++count;
        const double d = v - mean;
        mean += d / static_cast<double>(count);
        m2 += d * (v - mean);
    }

    void merge(const SlotStats& o)
    {
        if (o.count == 0) return;
        const double n = static_cast<double>(count), m = static_cast<double>(o.count);
        const double d = o.mean - mean;
        mean += d * m / (n + m);
        m2 += o.m2 + d * d * n * m / (n + m);
        count += o.count;
        for (std::size_t i = 0; i < hits.size(); ++i) hits[i] += o.hits[i];
    }
};

} // namespace detail

/*
 * Monte Carlo of the first access stage. Per slot: draw the active set,
 * each active device attempts with probability eps and picks a preamble
 * from its selection distribution; a preamble succeeds when exactly one
 * device picked it. Slots run in fixed-size chunks with their own seed
 * streams, merged in chunk order, so results do not depend on threading.
 */
inline SimResult simulate(const SelectionPolicy& policy, const ActivitySource& source, std::uint64_t slots,
                          std::uint64_t seed, std::uint64_t chunk = 4096)
{
    require(slots >= 1, "need at least one slot");
    require(chunk >= 1, "chunk size must be positive");
    const int K = policy.devices(), N = policy.preambles();
    std::vector<double> cdf(static_cast<std::size_t>(K) * N);
    for (int k = 0; k < K; ++k) {
        double acc = 0.0;
        for (int n = 0; n < N; ++n) cdf[static_cast<std::size_t>(k) * N + n] = acc += policy.prob(k, n);
    }
    const std::uint64_t chunks = (slots + chunk - 1) / chunk;
    std::vector<detail::SlotStats> parts(chunks);
    const CounterRng root(seed);
    parallel_for(chunks, [&](std::size_t c) {
        CounterRng rng = root.split(c);
        auto& st = parts[c];
        st.hits.assign(N, 0);
        std::vector<int> active;
        std::vector<int> picks(N);
        const std::uint64_t begin = c * chunk, end = std::min(slots, begin + chunk);
        for (std::uint64_t s = begin; s < end; ++s) {
            source(rng, active);
            std::fill(picks.begin(), picks.end(), 0);
            for (int k : active) {
                if (k < 0 || k >= K) throw ValidationError("activity source produced an invalid device");
                if (!rng.bernoulli(policy.epsilon())) continue;
                const double* row = cdf.data() + static_cast<std::size_t>(k) * N;
                const double u = rng.uniform() * row[N - 1];
                int n = static_cast<int>(std::upper_bound(row, row + N, u) - row);
                if (n >= N) n = N - 1;
                ++picks[n];
            }
            int wins = 0;
            for (int n = 0; n < N; ++n)
                if (picks[n] == 1) {
                    ++wins;
                    ++st.hits[n];
                }
            st.add(wins);
        }
    });
    detail::SlotStats total;
    total.hits.assign(N, 0);
    for (const auto& p : parts) total.merge(p);

    SimResult r;
    r.slots = total.count;
    r.mean = total.mean;
    r.sd = total.count > 1 ? std::sqrt(total.m2 / static_cast<double>(total.count - 1)) : 0.0;
    r.half_width = 1.96 * r.sd / std::sqrt(static_cast<double>(total.count));
    r.preamble_success.resize(N);
    for (int n = 0; n < N; ++n) r.preamble_success[n] = static_cast<double>(total.hits[n]) / static_cast<double>(total.count);
    r.seed = seed;
    return r;
}

inline SimResult simulate(const SelectionPolicy& policy, const JointActivityDistribution& d, std::uint64_t slots,
                          std::uint64_t seed)
{
    require(policy.devices() == d.devices(), "policy and activity model disagree on K");
    return simulate(policy, activity_source(d), slots, seed);
}

inline SimResult simulate(const SelectionPolicy& policy, const GroupActivityModel& model, std::uint64_t slots,
                          std::uint64_t seed)
{
    require(policy.devices() == model.devices, "policy and activity model disagree on K");
    return simulate(policy, activity_source(model), slots, seed);
}

inline SimResult simulate(const SelectionPolicy& policy, const SampleSet& samples, std::uint64_t slots,
                          std::uint64_t seed)
{
    require(policy.devices() == samples.devices(), "policy and samples disagree on K");
    return simulate(policy, activity_source(samples), slots, seed);
}

} // namespace rach
