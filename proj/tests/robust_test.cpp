#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include <rach_optim/rach_optim.hpp>

#include "oracles.hpp"

using namespace rach;

namespace {

// max c * x on (0, 1), or max -(x - c)^2 when quadratic.
struct Interval {
    double c;
    bool quadratic;

    std::size_t inequality_count() const { return 2; }
    bool strictly_feasible(const Eigen::VectorXd& z) const { return z[0] > 0.0 && z[0] < 1.0; }
    double barrier_value(const Eigen::VectorXd& z, double t) const
    {
        const double x = z[0];
        const double f = quadratic ? -(x - c) * (x - c) : c * x;
        return -t * f - std::log(x) - std::log(1.0 - x);
    }
    Eigen::VectorXd newton_step(const Eigen::VectorXd& z, double t, double& dec2) const
    {
        const double x = z[0];
        const double g = (quadratic ? 2.0 * t * (x - c) : -t * c) - 1.0 / x + 1.0 / (1.0 - x);
        const double h = (quadratic ? 2.0 * t : 0.0) + 1.0 / (x * x) + 1.0 / ((1.0 - x) * (1.0 - x));
        dec2 = g * g / h;
        return Eigen::VectorXd::Constant(1, -g / h);
    }
};

UncertaintyModel random_model(int K, std::mt19937_64& gen, double delta_bar)
{
    return uncertainty_from_relative_error(JointActivityDistribution::from_probs(K, oracle::random_probs(K, gen)),
                                           delta_bar);
}

DualIterate random_iterate(const UncertaintyModel& u, int N, std::mt19937_64& gen)
{
    return iterate_from_policy(oracle::random_policy(u.devices(), N, gen, 0.3, 1.0), u);
}

double true_constraint_part(const DualIterate& it, std::span<const double> b, Mask x)
{
    oracle::Matrix a(it.devices, std::vector<double>(it.preambles));
    for (int k = 0; k < it.devices; ++k)
        for (int n = 0; n < it.preambles; ++n) a[k][n] = b[k * it.preambles + n];
    return oracle::T(a, 1.0, x);
}

// Random B = eps * A near the center, rows summing to a common eps.
std::vector<double> perturbed(const DualIterate& c, std::mt19937_64& gen, double scale)
{
    std::uniform_real_distribution<double> u(-scale, scale);
    const int N = c.preambles;
    std::vector<double> b(c.b.size());
    std::vector<double> rows(c.devices);
    for (int k = 0; k < c.devices; ++k) {
        double s = 0.0;
        for (int n = 0; n < N; ++n) s += b[k * N + n] = std::max(1e-3, c.b[k * N + n] + u(gen));
        rows[k] = s;
    }
    const double eps = std::clamp(c.epsilon + u(gen), 0.05, 1.0);
    for (int k = 0; k < c.devices; ++k)
        for (int n = 0; n < N; ++n) b[k * N + n] *= eps / rows[k];
    return b;
}

} // namespace

TEST(Barrier, LinearObjectiveApproachesBoundary)
{
    Eigen::VectorXd z = Eigen::VectorXd::Constant(1, 0.5);
    const auto r = barrier_maximize(Interval{1.0, false}, z, {});
    EXPECT_LE(r.gap, 1e-7);
    EXPECT_NEAR(r.z[0], 1.0, 1e-6);
}

TEST(Barrier, InteriorOptimum)
{
    Eigen::VectorXd z = Eigen::VectorXd::Constant(1, 0.9);
    const auto r = barrier_maximize(Interval{0.3, true}, z, {});
    EXPECT_NEAR(r.z[0], 0.3, 1e-6);
}

TEST(Barrier, InfeasibleStartThrows)
{
    Eigen::VectorXd z = Eigen::VectorXd::Constant(1, 1.5);
    EXPECT_THROW(barrier_maximize(Interval{1.0, false}, z, {}), NumericalError);
}

TEST(Subproblem, CurvatureExamples)
{
    const auto u = UncertaintyModel::from_bounds(2, {0.25, 0.25, 0.0, 0.25}, {0.5, 0.5, 0.5, 0.5});
    const std::vector<int> one{0, 0};
    const auto spec = build_subproblem(initial_iterate(one, 1), u);
    EXPECT_NEAR(spec.objective_curvature, std::sqrt(0.5), 1e-15);

    std::mt19937_64 gen(41);
    const auto u3 = random_model(3, gen, 0.2);
    const std::vector<int> assign{0, 1, 0};
    const auto spec3 = build_subproblem(initial_iterate(assign, 2), u3);
    EXPECT_NEAR(spec3.curvature[0b111], std::sqrt(2.0) * 9.0, 1e-12);
    EXPECT_NEAR(spec3.curvature[0b010], std::sqrt(2.0), 1e-15);
    EXPECT_EQ(spec3.curvature[0], 0.0);
}

TEST(Subproblem, MinorantTouchesAndLowerBounds)
{
    std::mt19937_64 gen(42);
    for (int trial = 0; trial < 10; ++trial) {
        const int K = 2 + trial % 3, N = 1 + trial % 3;
        const auto u = random_model(K, gen, 0.3);
        const auto center = random_iterate(u, N, gen);
        const auto spec = build_subproblem(center, u);
        for (Mask x = 0; x < u.size(); ++x)
            EXPECT_NEAR(spec.constraint_part(center.b, x), true_constraint_part(center, center.b, x), 1e-12);
        EXPECT_NEAR(spec.minorant_objective(center.b, center.lambda, center.nu), dual_objective(center, u), 1e-12);
        for (int s = 0; s < 20; ++s) {
            auto it = center;
            it.b = perturbed(center, gen, 0.5);
            for (Mask x = 0; x < u.size(); ++x)
                EXPECT_LE(spec.constraint_part(it.b, x), true_constraint_part(center, it.b, x) + 1e-12);
            EXPECT_LE(spec.minorant_objective(it.b, it.lambda, it.nu), dual_objective(it, u) + 1e-12);
        }
    }
}

TEST(Subproblem, SolutionIsFeasibleAndImproves)
{
    std::mt19937_64 gen(43);
    for (int trial = 0; trial < 8; ++trial) {
        const int K = 2 + trial % 3, N = 2;
        const auto u = random_model(K, gen, 0.3);
        const auto center = random_iterate(u, N, gen);
        const auto spec = build_subproblem(center, u);
        const auto sol = solve_subproblem(spec);
        const auto& p = sol.point;
        EXPECT_GT(p.epsilon, 0.0);
        EXPECT_LE(p.epsilon, 1.0);
        for (int k = 0; k < K; ++k) {
            double row = 0.0;
            for (int n = 0; n < N; ++n) {
                EXPECT_GE(p.b[k * N + n], 0.0);
                row += p.b[k * N + n];
            }
            EXPECT_NEAR(row, p.epsilon, 1e-9);
        }
        for (Mask x = 0; x < u.size(); ++x) {
            EXPECT_GE(p.lambda[x], 0.0);
            EXPECT_GE(spec.minorant_constraint(p.b, p.lambda[x], p.nu, x), -1e-9) << "pattern " << x;
        }
        EXPECT_GE(spec.minorant_objective(p.b, p.lambda, p.nu),
                  spec.minorant_objective(center.b, center.lambda, center.nu) - 1e-6);
    }
}

TEST(ScaStep, ConvexCombination)
{
    DualIterate a, b;
    a.devices = b.devices = 1;
    a.preambles = b.preambles = 2;
    a.b = {1.0, 0.0};
    b.b = {0.0, 0.5};
    a.lambda = {0.0, 2.0};
    b.lambda = {1.0, 0.0};
    a.epsilon = 1.0;
    b.epsilon = 0.5;
    a.nu = -1.0;
    b.nu = 1.0;
    const auto h = sca_step(a, b, 0.5);
    EXPECT_EQ(h.b, (std::vector<double>{0.5, 0.25}));
    EXPECT_EQ(h.lambda, (std::vector<double>{0.5, 1.0}));
    EXPECT_EQ(h.epsilon, 0.75);
    EXPECT_EQ(h.nu, 0.0);
    const auto full = sca_step(a, b, 1.0);
    EXPECT_EQ(full.b, b.b);
    EXPECT_EQ(full.nu, b.nu);
    EXPECT_THROW(sca_step(a, b, 0.0), ValidationError);
}

TEST(Dual, StrongDualityAtInnerOptimum)
{
    std::mt19937_64 gen(44);
    for (int trial = 0; trial < 20; ++trial) {
        const int K = 1 + trial % 5, N = 1 + trial % 3;
        const auto u = random_model(K, gen, 0.1 * (trial % 8));
        const auto policy = oracle::random_policy(K, N, gen);
        EXPECT_NEAR(dual_objective(iterate_from_policy(policy, u), u), worst_case_throughput(policy, u), 1e-12);
    }
}

TEST(Dual, RecoverPolicyRoundTrip)
{
    std::mt19937_64 gen(45);
    const auto u = random_model(3, gen, 0.2);
    const auto policy = oracle::random_policy(3, 2, gen);
    const auto back = recover_policy(iterate_from_policy(policy, u));
    EXPECT_NEAR(back.epsilon(), policy.epsilon(), 1e-15);
    for (int k = 0; k < 3; ++k)
        for (int n = 0; n < 2; ++n) EXPECT_NEAR(back.prob(k, n), policy.prob(k, n), 1e-15);
}

TEST(WorstCase, ZeroRadiusIsAverage)
{
    std::mt19937_64 gen(46);
    const auto d = JointActivityDistribution::from_probs(4, oracle::random_probs(4, gen));
    const auto u = uncertainty_from_relative_error(d, 0.0);
    const auto policy = oracle::random_policy(4, 2, gen);
    EXPECT_NEAR(worst_case_throughput(policy, u), oracle::average(policy, d), 1e-14);
}

TEST(RobustSca, Example1MatchesBcdOrBetter)
{
    const auto d = from_example1(0.5, 1.0);
    const auto u = uncertainty_from_relative_error(d, 0.3);
    const auto bcd = run_bcd_exact(d, 2);
    ScaConfig config;
    config.warm_starts.push_back(bcd.policy);
    const auto r = run_robust_sca(u, 2, config);
    EXPECT_GE(r.objective, worst_case_throughput(bcd.policy, u) - 1e-6);
    EXPECT_NEAR(r.objective, worst_case_throughput(r.policy, u), 1e-15);
    EXPECT_LE(r.kkt_residual, 1e-3);
}

TEST(RobustSca, TrajectoryAndDualBound)
{
    std::mt19937_64 gen(47);
    for (int trial = 0; trial < 4; ++trial) {
        const int K = 2 + trial % 3;
        const auto u = random_model(K, gen, 0.25);
        ScaConfig config;
        config.restarts = 1;
        config.seed = trial;
        config.max_iterations = 100;
        const auto r = run_robust_sca(u, 2, config);
        const auto& t = r.trajectory;
        ASSERT_FALSE(t.empty());
        for (std::size_t i = 1; i < t.size(); ++i) EXPECT_GE(t[i], t[i - 1] - 1e-6) << "step " << i;
        // A feasible dual point bounds the worst case from below.
        EXPECT_GE(r.objective, t.back() - 1e-6);
    }
}

TEST(RobustSca, BeatsRandomPolicies)
{
    std::mt19937_64 gen(48);
    const auto u = random_model(3, gen, 0.2);
    ScaConfig config;
    config.seed = 5;
    const auto r = run_robust_sca(u, 2, config);
    for (int i = 0; i < 50; ++i)
        EXPECT_GE(r.objective, worst_case_throughput(oracle::random_policy(3, 2, gen), u) - 1e-6);
}

TEST(RobustSca, SingletonPolytope)
{
    const auto d = from_group_model({3, 3, 0.5});
    const auto r = run_robust_sca(UncertaintyModel::singleton(d), 3);
    EXPECT_NEAR(r.objective, 1.5, 1e-4);
}

TEST(RobustSca, CapacityLimit)
{
    const auto u = uncertainty_from_group_model({13, 13, 0.1}, 0.1);
    EXPECT_THROW(run_robust_sca(u, 2), CapacityError);
}

TEST(RobustLowcomp, RanksRestartsByExactWorstCase)
{
    std::mt19937_64 gen(49);
    const auto u = random_model(5, gen, 0.2);
    BcdConfig config;
    config.restarts = 1;
    const auto single = run_robust_lowcomp(u, 2, config);
    config.restarts = 4;
    const auto r = run_robust_lowcomp(u, 2, config);
    EXPECT_EQ(r.algorithm, "robust-lowcomp");
    EXPECT_NEAR(r.objective, approx_worst_case_throughput(r.policy, u), 1e-14);
    EXPECT_TRUE(r.policy.is_vertex());
    // Restart 0 is shared, so the exact score can only improve.
    EXPECT_GE(worst_case_throughput(r.policy, u), worst_case_throughput(single.policy, u));
}

TEST(KktResidual, LargeAwayFromStationarity)
{
    const auto d = from_example1(0.5, 1.0);
    const auto u = uncertainty_from_relative_error(d, 0.3);
    // Everyone on one preamble at full probability is far from stationary.
    EXPECT_GT(kkt_residual(SelectionPolicy::uniform(3, 1, 1.0), u), 1e-2);
}
