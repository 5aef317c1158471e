#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "activity.hpp"
#include "errors.hpp"
#include "numeric.hpp"
#include "policy.hpp"

namespace rach {

namespace detail {

// Probabilities that none / exactly one of a set of devices transmits on a
// preamble, for independent per-device transmit probabilities u.
struct Contention {
    double none = 1.0;
    double one = 0.0;

    void absorb(double u) noexcept
    {
        one = one * (1.0 - u) + none * u;
        none *= 1.0 - u;
    }
    static Contention merge(const Contention& a, const Contention& b) noexcept
    {
        return {a.none * b.none, a.one * b.none + a.none * b.one};
    }
};

inline void mask_devices(Mask x, std::vector<int>& out)
{
    out.clear();
    while (x) {
        out.push_back(lowest_bit(x));
        x &= x - 1;
    }
}

} // namespace detail

// Expected number of singleton preambles given the active devices.
inline double conditional_throughput(const PolicyView& p, std::span<const int> active)
{
    double total = 0.0;
    for (int n = 0; n < p.preambles; ++n) {
        detail::Contention c;
        for (int k : active) c.absorb(p(k, n) * p.epsilon);
        total += c.one;
    }
    return total;
}

inline double conditional_throughput(const PolicyView& p, Mask x)
{
    thread_local std::vector<int> active;
    detail::mask_devices(x, active);
    return conditional_throughput(p, active);
}

/*
 * g_{k,n}: probability that no other active device transmits on preamble n
 * minus the probability that exactly one does, so that
 * dT/da_{k,n} = x_k * eps * g_{k,n}. Returned as a K x N row-major matrix for
 * every device (for inactive k the leave-one-out set is the whole active set).
 */
inline std::vector<double> grad_g_all(const PolicyView& p, std::span<const int> active)
{
    const int K = p.devices, N = p.preambles;
    std::vector<double> g(static_cast<std::size_t>(K) * N);
    const std::size_t A = active.size();
    std::vector<detail::Contention> prefix(A + 1), suffix(A + 1);
    for (int n = 0; n < N; ++n) {
        prefix[0] = {};
        for (std::size_t i = 0; i < A; ++i) {
            prefix[i + 1] = prefix[i];
            prefix[i + 1].absorb(p(active[i], n) * p.epsilon);
        }
        suffix[A] = {};
        for (std::size_t i = A; i-- > 0;) {
            suffix[i] = suffix[i + 1];
            suffix[i].absorb(p(active[i], n) * p.epsilon);
        }
        const double everyone = prefix[A].none - prefix[A].one;
        for (int k = 0; k < K; ++k) g[static_cast<std::size_t>(k) * N + n] = everyone;
        for (std::size_t i = 0; i < A; ++i) {
            const auto others = detail::Contention::merge(prefix[i], suffix[i + 1]);
            g[static_cast<std::size_t>(active[i]) * N + n] = others.none - others.one;
        }
    }
    return g;
}

inline std::vector<double> grad_g(const PolicyView& p, Mask x, int k)
{
    require(k >= 0 && k < p.devices, "device index out of range");
    std::vector<int> active;
    detail::mask_devices(x, active);
    const auto all = grad_g_all(p, active);
    return {all.begin() + static_cast<std::ptrdiff_t>(k) * p.preambles,
            all.begin() + static_cast<std::ptrdiff_t>(k + 1) * p.preambles};
}

inline void require_matching(const PolicyView& p, int devices)
{
    require(p.devices == devices, "policy and activity model disagree on K");
}

// Average throughput by direct enumeration over all patterns.
inline double average_throughput_direct(const PolicyView& p, const JointActivityDistribution& d)
{
    require_matching(p, d.devices());
    CompensatedSum s;
    std::vector<int> active;
    for (Mask m = 1; m < d.size(); ++m) {
        const double w = d.prob(m);
        if (w == 0.0) continue;
        detail::mask_devices(m, active);
        s += w * conditional_throughput(p, active);
    }
    return s.value();
}

/*
 * Average throughput through the inclusion-exclusion expansion over device
 * subsets: sum_n sum_{S != 0} |S| (-1)^{|S|-1} alpha[S] prod_{k in S} (eps a_{k,n}).
 */
inline double average_throughput_expansion(const PolicyView& p,
                                           const JointActivityDistribution& d)
{
    require_matching(p, d.devices());
    const auto alpha = d.alpha();
    std::vector<double> prod(d.size());
    CompensatedSum s;
    for (int n = 0; n < p.preambles; ++n) {
        prod[0] = 1.0;
        for (Mask S = 1; S < d.size(); ++S) {
            const int low = lowest_bit(S);
            prod[S] = prod[S & (S - 1)] * p.epsilon * p(low, n);
            if (prod[S] == 0.0) continue;
            const int size = popcount(S);
            const double sign = (size & 1) ? 1.0 : -1.0;
            s += sign * size * alpha[S] * prod[S];
        }
    }
    return s.value();
}

inline double average_throughput(const PolicyView& p, const JointActivityDistribution& d)
{
    return average_throughput_direct(p, d);
}

/*
 * Q_{k,n} = dTbar/da_{k,n}
 *         = sum_{S containing k} |S| (-1)^{|S|-1} eps^{|S|} alpha[S] prod_{l in S\k} a_{l,n}.
 */
inline std::vector<double> grad_Q(const PolicyView& p, const JointActivityDistribution& d, int k)
{
    require_matching(p, d.devices());
    require(k >= 0 && k < p.devices, "device index out of range");
    const auto alpha = d.alpha();
    const Mask kbit = Mask{1} << k;
    std::vector<double> q(p.preambles, 0.0);
    std::vector<double> prod(d.size());
    for (int n = 0; n < p.preambles; ++n) {
        CompensatedSum s;
        prod[0] = 1.0;
        s += p.epsilon * alpha[kbit];
        for (Mask R = 1; R < d.size(); ++R) {
            if (R & kbit) continue;
            const int low = lowest_bit(R);
            prod[R] = prod[R & (R - 1)] * p.epsilon * p(low, n);
            if (prod[R] == 0.0) continue;
            const int size = popcount(R) + 1;
            const double sign = (size & 1) ? 1.0 : -1.0;
            s += sign * size * p.epsilon * alpha[R | kbit] * prod[R];
        }
        q[n] = s.value();
    }
    return q;
}

/*
 * Coefficients c_0..c_{K-1} (ascending powers of eps) of
 * q(eps) = dTbar/deps = sum_m m^2 (-1)^{m-1} eps^{m-1} sum_n sum_{|S|=m} alpha[S] prod a_{k,n}.
 * The barring factor of the view is ignored.
 */
inline std::vector<double> q_coefficients(const PolicyView& p, const JointActivityDistribution& d)
{
    require_matching(p, d.devices());
    const auto alpha = d.alpha();
    const int K = d.devices();
    std::vector<CompensatedSum> by_size(K + 1);
    std::vector<double> prod(d.size());
    for (int n = 0; n < p.preambles; ++n) {
        prod[0] = 1.0;
        for (Mask S = 1; S < d.size(); ++S) {
            prod[S] = prod[S & (S - 1)] * p(lowest_bit(S), n);
            if (prod[S] != 0.0) by_size[popcount(S)] += alpha[S] * prod[S];
        }
    }
    std::vector<double> c(K, 0.0);
    for (int m = 1; m <= K; ++m) {
        const double sign = (m & 1) ? 1.0 : -1.0;
        c[m - 1] = sign * m * m * by_size[m].value();
    }
    return c;
}

inline double q_eval(std::span<const double> coeffs, double epsilon)
{
    double v = 0.0;
    for (std::size_t j = coeffs.size(); j-- > 0;) v = v * epsilon + coeffs[j];
    return v;
}

// Tbar as a function of eps alone, from the q coefficients (Tbar(0) = 0).
inline double average_from_q(std::span<const double> coeffs, double epsilon)
{
    CompensatedSum s;
    double power = epsilon;
    for (std::size_t j = 0; j < coeffs.size(); ++j) {
        s += coeffs[j] * power / static_cast<double>(j + 1);
        power *= epsilon;
    }
    return s.value();
}

// ---------------------------------------------------------------------------
// Worst case over the uncertainty polytope
// ---------------------------------------------------------------------------

struct WorstCase {
    double value = 0.0;
    std::vector<double> distribution;  // a minimizing p in the polytope
    std::vector<double> coefficients;  // conditional throughput per pattern
    Mask pivot = 0;                    // last pattern that received residual mass
};

/*
 * min over p in {lower <= p <= upper, sum p = 1} of sum_m p_m T(x_m): start
 * every pattern at its lower bound and pour the remaining mass into patterns
 * in ascending order of T (ties by pattern index).
 */
inline WorstCase worst_case(const PolicyView& p, const UncertaintyModel& u)
{
    require_matching(p, u.devices());
    if (u.lower_sum() > 1.0 + 1e-12 || u.upper_sum() < 1.0 - 1e-12)
        throw ValidationError("uncertainty polytope is infeasible");
    const std::size_t size = u.size();
    WorstCase out;
    out.coefficients.resize(size);
    std::vector<int> active;
    for (Mask m = 0; m < size; ++m) {
        detail::mask_devices(m, active);
        out.coefficients[m] = conditional_throughput(p, active);
    }
    std::vector<Mask> order(size);
    std::iota(order.begin(), order.end(), Mask{0});
    std::sort(order.begin(), order.end(), [&](Mask a, Mask b) {
        if (out.coefficients[a] != out.coefficients[b])
            return out.coefficients[a] < out.coefficients[b];
        return a < b;
    });
    const auto lower = u.lower();
    const auto upper = u.upper();
    out.distribution.assign(lower.begin(), lower.end());
    double residual = 1.0 - u.lower_sum();
    out.pivot = order.front();
    for (Mask m : order) {
        if (residual <= 0.0) break;
        const double add = std::min(upper[m] - lower[m], residual);
        if (add <= 0.0) continue;
        out.distribution[m] += add;
        residual -= add;
        out.pivot = m;
    }
    CompensatedSum s;
    for (Mask m = 0; m < size; ++m) s += out.distribution[m] * out.coefficients[m];
    out.value = s.value();
    return out;
}

inline double worst_case_throughput(const PolicyView& p, const UncertaintyModel& u)
{
    return worst_case(p, u).value;
}

inline double sample_average_throughput(const PolicyView& p, const SampleSet& samples)
{
    require_matching(p, samples.devices());
    CompensatedSum s;
    std::vector<int> active;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        samples.active_devices(i, active);
        s += conditional_throughput(p, active);
    }
    return s.value() / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Second-order approximations
// ---------------------------------------------------------------------------

// sum_n sum_k a_{k,n} sum_{l>k} a_{l,n} pair(k,l).
inline double pair_contention(const PolicyView& p, std::span<const double> pairwise)
{
    const int K = p.devices, N = p.preambles;
    CompensatedSum s;
    std::vector<double> acc(N);
    // For each k accumulate sum_{l>k} pair(k,l) a_l into acc, then dot with a_k.
    for (int k = 0; k < K; ++k) {
        const auto ak = p.row(k);
        bool any = false;
        for (int n = 0; n < N; ++n) any |= ak[n] != 0.0;
        if (!any) continue;
        std::fill(acc.begin(), acc.end(), 0.0);
        const double* prow = pairwise.data() + static_cast<std::size_t>(k) * K;
        for (int l = k + 1; l < K; ++l) {
            const double w = prow[l];
            if (w == 0.0) continue;
            const auto al = p.row(l);
            for (int n = 0; n < N; ++n) acc[n] += w * al[n];
        }
        for (int n = 0; n < N; ++n) s += ak[n] * acc[n];
    }
    return s.value();
}

inline double approx_throughput(const PolicyView& p, std::span<const double> marginals,
                                std::span<const double> pairwise)
{
    require(static_cast<int>(marginals.size()) == p.devices, "marginal vector must have K entries");
    require(pairwise.size() == static_cast<std::size_t>(p.devices) * p.devices,
            "pairwise table must be K x K");
    CompensatedSum m;
    for (double v : marginals) m += v;
    return p.epsilon * m.value() - p.epsilon * p.epsilon * pair_contention(p, pairwise);
}

inline double approx_throughput(const PolicyView& p, const PairStats& stats)
{
    return approx_throughput(p, stats.marginal, stats.pairwise);
}

// Same form with lower marginals and upper pairwise probabilities.
inline double approx_worst_case_throughput(const PolicyView& p,
                                           std::span<const double> lower_marginals,
                                           std::span<const double> upper_pairwise)
{
    return approx_throughput(p, lower_marginals, upper_pairwise);
}

inline double approx_worst_case_throughput(const PolicyView& p, const UncertaintyModel& u)
{
    return approx_throughput(p, u.robust_pair_stats());
}

} // namespace rach
