#pragma once

#include <algorithm>
#include <array>
#include <span>
#include <string>
#include <vector>

#include "activity.hpp"
#include "errors.hpp"
#include "numeric.hpp"
#include "policy.hpp"

namespace rach {

/*
 * LTE-style baseline: every device picks a preamble uniformly and the
 * barring factor is min(1, N / Kbar), Kbar the expected number of active
 * devices (eps = 1 when Kbar = 0).
 */
inline SelectionPolicy bl_lte(std::span<const double> marginals, int preambles)
{
    require(!marginals.empty(), "need at least one device");
    require(preambles >= 1, "N must be at least 1");
    CompensatedSum load;
    for (double m : marginals) {
        require(m >= 0.0 && m <= 1.0 + 1e-12, "marginal probabilities must lie in [0, 1]");
        load += m;
    }
    const double kbar = load.value();
    const double eps = kbar > 0.0 ? std::min(1.0, preambles / kbar) : 1.0;
    return SelectionPolicy::uniform(static_cast<int>(marginals.size()), preambles, eps);
}

inline SelectionPolicy bl_lte(const PairStats& stats, int preambles) { return bl_lte(stats.marginal, preambles); }

inline SelectionPolicy bl_lte(const JointActivityDistribution& d, int preambles)
{
    std::vector<double> m(d.devices());
    for (int k = 0; k < d.devices(); ++k) m[k] = marginal(d, k);
    return bl_lte(m, preambles);
}

inline SelectionPolicy bl_lte(const GroupActivityModel& model, int preambles)
{
    model.validate();
    return bl_lte(std::vector<double>(model.devices, model.active_prob), preambles);
}

// Kbar from the empirical activity frequencies.
inline SelectionPolicy bl_lte(const SampleSet& samples, int preambles)
{
    return bl_lte(empirical_pair_stats(samples).marginal, preambles);
}

// ---------------------------------------------------------------------------
// The three-device example family
// ---------------------------------------------------------------------------

// Barring factor of scheme 1 (devices 1 and 2 share a preamble).
inline double example1_epsilon1(double p, double eta)
{
    const double den = eta + (1.0 - eta) * p;
    if (den <= 0.0) return 1.0;
    return std::min(1.0, 0.75 / den);
}

/*
 * Schemes 1-4 for three devices and two preambles:
 *   1: devices 1, 2 on preamble 1, device 3 on preamble 2
 *   2: device 1 on preamble 1, devices 2, 3 on preamble 2
 *   3: scheme 1 when eta <= 0, otherwise scheme 2
 *   4: uniform selection
 * Only scheme 1 uses a barring factor below one.
 */
inline std::array<SelectionPolicy, 4> example1_schemes(double p, double eta)
{
    const std::array<int, 3> a1{0, 0, 1};
    const std::array<int, 3> a2{0, 1, 1};
    auto s1 = SelectionPolicy::vertex(a1, 2, example1_epsilon1(p, eta));
    auto s2 = SelectionPolicy::vertex(a2, 2, 1.0);
    auto s3 = SelectionPolicy::vertex(eta <= 0.0 ? a1 : a2, 2, 1.0);
    auto s4 = SelectionPolicy::uniform(3, 2, 1.0);
    return {std::move(s1), std::move(s2), std::move(s3), std::move(s4)};
}

// Preamble-collision-aware baselines from the literature; not provided.
[[noreturn]] inline void mmpc_baseline()
{
    throw NotImplementedError("the MMPC baseline is not implemented in this library (see README, Baselines)");
}

[[noreturn]] inline void mspc_baseline()
{
    throw NotImplementedError("the MSPC baseline is not implemented in this library (see README, Baselines)");
}

} // namespace rach
