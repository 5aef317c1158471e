#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "activity.hpp"
#include "errors.hpp"
#include "numeric.hpp"
#include "policy.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "roots.hpp"
#include "throughput.hpp"

namespace rach {

struct BcdConfig {
    int max_outer_iterations = 1000;
    int restarts = 5;
    double root_imag_tolerance = 1e-9;
    // Relative slack used to decide argmax/argmin membership of a block.
    double argmax_tolerance = 1e-12;
    std::uint64_t seed = 0;

    void validate() const
    {
        require(max_outer_iterations > 0, "max_outer_iterations must be positive");
        require(restarts > 0, "restarts must be positive");
        require(root_imag_tolerance > 0.0, "root_imag_tolerance must be positive");
        require(argmax_tolerance >= 0.0, "argmax_tolerance must be nonnegative");
    }
};

// ===========================================================================
// Exact block coordinate ascent on the average throughput
// ===========================================================================

/*
 * Maximizes Tbar over a_k: any e_m with m in argmax_n Q_{k,n}. The current
 * row is kept when it already is such a vertex.
 */
inline VertexChoice bcd_block_a(SelectionPolicy& policy, int k, const JointActivityDistribution& d,
                                CounterRng& rng, double tol = 1e-12)
{
    const auto q = grad_Q(policy, d, k);
    const auto choice = choose_vertex(q, /*maximize=*/true, policy.vertex_index(k), rng, tol);
    if (choice.changed) policy.set_vertex(k, choice.index);
    return choice;
}

namespace detail {

inline double best_epsilon(std::span<const double> coeffs, double current, double imag_tol)
{
    double scale = 0.0;
    for (double c : coeffs) scale = std::max(scale, std::abs(c));
    if (scale < 1e-15) return 1.0;

    auto candidates = real_roots_in_unit_interval(coeffs, imag_tol);
    candidates.push_back(1.0);
    double best_eps = candidates.front();
    double best_val = average_from_q(coeffs, best_eps);
    for (double e : candidates) {
        const double v = average_from_q(coeffs, e);
        if (v > best_val) {
            best_val = v;
            best_eps = e;
        }
    }
    if (average_from_q(coeffs, current) >= best_val) return current;
    return best_eps;
}

} // namespace detail

/*
 * Maximizes Tbar over eps in [0, 1]: the optimum is among the real roots of
 * q(A, eps) in [0, 1] and the endpoint 1. Keeps the current eps if nothing
 * beats it.
 */
inline double bcd_block_epsilon(const SelectionPolicy& policy, const JointActivityDistribution& d,
                                double imag_tol = 1e-9)
{
    const auto c = q_coefficients(policy, d);
    return detail::best_epsilon(c, policy.epsilon(), imag_tol);
}

namespace detail {

inline void require_not_idle(const JointActivityDistribution& d)
{
    require(d.idle_probability() < 1.0, "activity distribution has p_0 = 1 (no device ever active)");
}

inline OptimizerReport bcd_exact_single(const JointActivityDistribution& d, int preambles,
                                        const BcdConfig& config, CounterRng rng)
{
    const int K = d.devices();
    SelectionPolicy policy =
        SelectionPolicy::vertex(random_assignment(K, preambles, rng), preambles, 1.0);
    OptimizerReport report{.algorithm = "bcd-exact", .policy = policy};
    report.seed = config.seed;
    for (int it = 1; it <= config.max_outer_iterations; ++it) {
        const SelectionPolicy last = policy;
        for (int k = 0; k < K; ++k) {
            const auto choice = bcd_block_a(policy, k, d, rng, config.argmax_tolerance);
            if (choice.set_size > 1) ++report.tie_events;
        }
        const auto c = q_coefficients(policy, d);
        policy.set_epsilon(best_epsilon(c, policy.epsilon(), config.root_imag_tolerance));
        report.trajectory.push_back(average_from_q(c, policy.epsilon()));
        report.iterations = it;
        if (policy.matrix().size() == last.matrix().size() &&
            std::equal(policy.matrix().begin(), policy.matrix().end(), last.matrix().begin())) {
            report.termination = Termination::fixed_point;
            break;
        }
    }
    report.policy = policy;
    report.objective = average_throughput(policy, d);
    return report;
}

} // namespace detail

/*
 * Best of `restarts` block coordinate ascent runs, each started from random
 * vertices with eps = 1 and stopped once a full sweep leaves A unchanged.
 */
inline OptimizerReport run_bcd_exact(const JointActivityDistribution& d, int preambles,
                                     const BcdConfig& config = {})
{
    config.validate();
    require(preambles >= 1, "N must be at least 1");
    detail::require_not_idle(d);
    std::vector<std::optional<OptimizerReport>> runs(config.restarts);
    const CounterRng root(config.seed);
    parallel_for(runs.size(), [&](std::size_t r) {
        runs[r] = detail::bcd_exact_single(d, preambles, config, root.split(r));
    });
    std::vector<OptimizerReport> done;
    for (auto& r : runs) done.push_back(std::move(*r));
    return merge_restarts(std::move(done));
}

// ===========================================================================
// Low-complexity block coordinate ascent on the second-order approximation
// ===========================================================================

// argmin over n of sum_{l != k} a_{l,n} pair(k, l).
inline VertexChoice lowcomp_block_a(SelectionPolicy& policy, int k, const PairStats& stats,
                                    CounterRng& rng, double tol = 1e-12)
{
    const int K = policy.devices(), N = policy.preambles();
    require(stats.devices == K, "statistics and policy disagree on K");
    std::vector<double> contention(N, 0.0);
    const auto row = stats.pair_row(k);
    const auto a = policy.matrix();
    for (int l = 0; l < K; ++l) {
        if (l == k || row[l] == 0.0) continue;
        const double* al = a.data() + static_cast<std::size_t>(l) * N;
        for (int n = 0; n < N; ++n) contention[n] += row[l] * al[n];
    }
    const auto choice = choose_vertex(contention, /*maximize=*/false, policy.vertex_index(k), rng, tol);
    if (choice.changed) policy.set_vertex(k, choice.index);
    return choice;
}

// min(1, sum_k marginal_k / (2 * sum_n sum_k a_{k,n} sum_{l>k} a_{l,n} pair(k,l))).
inline double lowcomp_block_epsilon(const SelectionPolicy& policy, const PairStats& stats)
{
    CompensatedSum num;
    for (double m : stats.marginal) num += m;
    const double den = 2.0 * pair_contention(policy, stats.pairwise);
    if (den <= 0.0) return 1.0;
    return std::clamp(num.value() / den, 0.0, 1.0);
}

// Scores a finished low-complexity run when picking the best restart.
using PolicyScore = std::function<double(const SelectionPolicy&)>;

namespace detail {

inline OptimizerReport lowcomp_single(const PairStats& stats, int preambles, const BcdConfig& config,
                                      CounterRng rng)
{
    const int K = stats.devices;
    SelectionPolicy policy =
        SelectionPolicy::vertex(random_assignment(K, preambles, rng), preambles, 1.0);
    OptimizerReport report{.algorithm = "bcd-lowcomp", .policy = policy};
    report.seed = config.seed;
    for (int it = 1; it <= config.max_outer_iterations; ++it) {
        bool changed = false;
        for (int k = 0; k < K; ++k) {
            const auto choice = lowcomp_block_a(policy, k, stats, rng, config.argmax_tolerance);
            changed |= choice.changed;
            if (choice.set_size > 1) ++report.tie_events;
        }
        policy.set_epsilon(lowcomp_block_epsilon(policy, stats));
        report.trajectory.push_back(approx_throughput(policy, stats));
        report.iterations = it;
        if (!changed) {
            report.termination = Termination::fixed_point;
            break;
        }
    }
    report.objective = report.trajectory.back();
    report.policy = std::move(policy);
    return report;
}

} // namespace detail

/*
 * Runs the low-complexity ascent from `restarts` random vertex starts.
 * With lower marginals and upper pairwise probabilities as `stats` this is
 * the approximate worst-case problem. `score`, when given, replaces the
 * approximate objective as the criterion for picking the best restart (the
 * report objective stays the approximate one).
 */
inline OptimizerReport run_bcd_lowcomp(const PairStats& stats, int preambles,
                                       const BcdConfig& config = {},
                                       const PolicyScore& score = nullptr)
{
    config.validate();
    require(preambles >= 1, "N must be at least 1");
    require(stats.expected_active() > 0.0, "no device is ever active");
    std::vector<std::optional<OptimizerReport>> runs(config.restarts);
    const CounterRng root(config.seed);
    parallel_for(runs.size(), [&](std::size_t r) {
        runs[r] = detail::lowcomp_single(stats, preambles, config, root.split(r));
    });
    std::vector<OptimizerReport> done;
    for (auto& r : runs) done.push_back(std::move(*r));
    if (!score) return merge_restarts(std::move(done));

    std::vector<double> scores;
    for (const auto& r : done) scores.push_back(score(r.policy));
    std::size_t best = 0;
    for (std::size_t r = 1; r < scores.size(); ++r)
        if (scores[r] > scores[best]) best = r;
    std::vector<double> objectives;
    for (const auto& r : done) objectives.push_back(r.objective);
    OptimizerReport out = std::move(done[best]);
    out.best_restart = static_cast<int>(best);
    out.restart_objectives = std::move(objectives);
    return out;
}

// ===========================================================================
// Exhaustive search over deterministic selections
// ===========================================================================

struct OracleResult {
    SelectionPolicy policy;
    double objective = 0.0;
    std::size_t evaluated = 0;
};

/*
 * Enumerates all N^K vertex selections, optimizing eps exactly for each.
 * Some global optimum is a vertex selection, so this returns the global
 * optimum up to root-finding accuracy.
 */
inline OracleResult exhaustive_oracle(const JointActivityDistribution& d, int preambles,
                                      double guard = 1e6, double imag_tol = 1e-9)
{
    require(preambles >= 1, "N must be at least 1");
    const int K = d.devices();
    const double combos = std::pow(static_cast<double>(preambles), K);
    if (combos > guard)
        throw CapacityError("exhaustive search over N^K = " + std::to_string(combos) +
                            " selections exceeds the guard of " + std::to_string(guard));
    std::vector<int> assign(K, 0);
    std::optional<OracleResult> best;
    std::size_t evaluated = 0;
    while (true) {
        auto policy = SelectionPolicy::vertex(assign, preambles, 1.0);
        const auto c = q_coefficients(policy, d);
        const double eps = detail::best_epsilon(c, 1.0, imag_tol);
        const double value = average_from_q(c, eps);
        ++evaluated;
        if (!best || value > best->objective) {
            policy.set_epsilon(eps);
            best = OracleResult{std::move(policy), value, 0};
        }
        int pos = 0;
        while (pos < K && ++assign[pos] == preambles) assign[pos++] = 0;
        if (pos == K) break;
    }
    best->evaluated = evaluated;
    best->objective = average_throughput(best->policy, d);
    return *best;
}

} // namespace rach
