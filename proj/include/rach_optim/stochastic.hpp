#pragma once

#include <algorithm>
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
#include "throughput.hpp"

namespace rach {

using StepSchedule = std::function<double(std::int64_t)>;

struct Schedules {
    StepSchedule rho;
    StepSchedule omega;
};

// rho(t) = t^-0.55 and omega(t) = t^-0.75.
inline Schedules default_schedules()
{
    return {[](std::int64_t t) { return std::pow(static_cast<double>(t), -0.55); },
            [](std::int64_t t) { return std::pow(static_cast<double>(t), -0.75); }};
}

struct StochasticConfig {
    int max_iterations = 20000;
    double mu = 1e-4; // stop once an iteration moves (A, eps) by at most mu
    double tau = 1.0;
    double argmax_tolerance = 1e-12;
    // Full-sample objective is recorded every this many iterations (and at the end).
    int trajectory_stride = 100;
    std::uint64_t seed = 0;
    // Independent runs; the one with the best full-sample objective wins.
    int restarts = 1;
    Schedules schedules = default_schedules();

    void validate() const
    {
        require(max_iterations > 0, "max_iterations must be positive");
        require(mu > 0.0, "mu must be positive");
        require(tau > 0.0, "tau must be positive");
        require(argmax_tolerance >= 0.0, "argmax_tolerance must be nonnegative");
        require(trajectory_stride > 0, "trajectory_stride must be positive");
        require(restarts >= 1, "restarts must be at least 1");
        require(static_cast<bool>(schedules.rho) && static_cast<bool>(schedules.omega),
                "step size schedules must be set");
    }
};

struct StochasticState {
    SelectionPolicy policy;
    std::vector<double> c; // K x N gradient trackers
    double c0 = 0.0;
    std::int64_t t = 0;
    CounterRng rng;
    std::size_t tie_events = 0;
};

// Random vertex selections, eps = 1, zero trackers.
inline StochasticState initial_stochastic_state(int devices, int preambles, std::uint64_t seed)
{
    require(devices >= 1 && preambles >= 1, "need K >= 1 and N >= 1");
    CounterRng init = CounterRng(seed).split(0);
    auto policy = SelectionPolicy::vertex(random_assignment(devices, preambles, init), preambles, 1.0);
    return {std::move(policy), std::vector<double>(static_cast<std::size_t>(devices) * preambles, 0.0), 0.0, 0,
            CounterRng(seed).split(1), 0};
}

/*
 * One iteration: draw a mini-batch, update the trackers from the previous
 * iterate, solve all K + 1 blocks from that same iterate, then move each
 * block a fraction omega(t) toward its solution. Returns the Euclidean length
 * of the step in (A, eps).
 */
inline double stochastic_step(StochasticState& s, const SampleSet& samples, const Schedules& schedules,
                              double tau = 1.0, double argmax_tolerance = 1e-12)
{
    const int K = s.policy.devices(), N = s.policy.preambles();
    require(samples.devices() == K, "samples and policy disagree on K");
    s.t += 1;
    const double rho = schedules.rho(s.t), omega = schedules.omega(s.t);
    require(rho > 0.0 && rho <= 1.0 && omega > 0.0 && omega <= 1.0, "step sizes must lie in (0, 1]");

    const auto batch = samples.batch_range(s.rng.below(samples.batches()));
    const double eps = s.policy.epsilon();
    const auto a = s.policy.matrix();
    std::vector<double> sum(static_cast<std::size_t>(K) * N, 0.0);
    double sum0 = 0.0;
    std::vector<int> active;
    for (std::size_t i = batch.first; i < batch.second; ++i) {
        samples.active_devices(i, active);
        if (active.empty()) continue;
        const auto g = grad_g_all(s.policy, active);
        for (int k : active)
            for (int n = 0; n < N; ++n) {
                const std::size_t j = static_cast<std::size_t>(k) * N + n;
                sum[j] += g[j];
                sum0 += a[j] * g[j];
            }
    }
    const double scale = 1.0 / static_cast<double>(batch.second - batch.first);
    for (std::size_t j = 0; j < sum.size(); ++j) s.c[j] = (1.0 - rho) * s.c[j] + rho * scale * eps * sum[j];
    s.c0 = (1.0 - rho) * s.c0 + rho * scale * sum0;

    std::vector<double> next(a.begin(), a.end());
    for (int k = 0; k < K; ++k) {
        const std::span<const double> row(s.c.data() + static_cast<std::size_t>(k) * N, N);
        const auto choice = choose_vertex(row, /*maximize=*/true, std::nullopt, s.rng, argmax_tolerance);
        if (choice.set_size > 1) ++s.tie_events;
        for (int n = 0; n < N; ++n) {
            double& v = next[static_cast<std::size_t>(k) * N + n];
            v = (1.0 - omega) * v + (n == choice.index ? omega : 0.0);
        }
    }
    const double eps_hat = std::clamp(eps + s.c0 / (2.0 * tau), 0.0, 1.0);
    const double eps_next = std::clamp((1.0 - omega) * eps + omega * eps_hat, 0.0, 1.0);

    double diff = (eps_next - eps) * (eps_next - eps);
    for (std::size_t j = 0; j < next.size(); ++j) diff += (next[j] - a[j]) * (next[j] - a[j]);
    s.policy = SelectionPolicy(K, N, std::move(next), eps_next);
    return std::sqrt(diff);
}

namespace detail {

inline OptimizerReport stochastic_single(const SampleSet& samples, int preambles, const StochasticConfig& config,
                                         std::uint64_t seed)
{
    auto state = initial_stochastic_state(samples.devices(), preambles, seed);
    OptimizerReport report{.algorithm = "stochastic", .policy = state.policy};
    report.seed = seed;
    for (int it = 1; it <= config.max_iterations; ++it) {
        const double diff = stochastic_step(state, samples, config.schedules, config.tau, config.argmax_tolerance);
        report.iterations = it;
        const bool done = diff <= config.mu;
        if (it % config.trajectory_stride == 0 || done || it == config.max_iterations)
            report.trajectory.push_back(sample_average_throughput(state.policy, samples));
        if (done) {
            report.termination = Termination::converged;
            break;
        }
    }
    report.policy = state.policy;
    report.objective = report.trajectory.back();
    report.tie_events = state.tie_events;
    return report;
}

} // namespace detail

/*
 * Mini-batch stochastic parallel SCA on the sample average throughput,
 * stopped once an iteration moves (A, eps) by at most mu. Testing A alone
 * stops runs whose selections settle while eps is still far from its
 * optimum. With a single restart the run uses `seed` directly; restart r > 0 uses a seed
 * drawn from split(r) of it.
 */
inline OptimizerReport run_stochastic(const SampleSet& samples, int preambles, const StochasticConfig& config = {})
{
    config.validate();
    require(preambles >= 1, "N must be at least 1");
    std::vector<std::optional<OptimizerReport>> runs(config.restarts);
    const CounterRng root(config.seed);
    parallel_for(runs.size(), [&](std::size_t r) {
        CounterRng seeder = root.split(r);
        const std::uint64_t seed = r == 0 ? config.seed : seeder();
        runs[r] = detail::stochastic_single(samples, preambles, config, seed);
    });
    std::vector<OptimizerReport> done;
    for (auto& r : runs) done.push_back(std::move(*r));
    auto report = merge_restarts(std::move(done));
    report.seed = config.seed;
    return report;
}

} // namespace rach
