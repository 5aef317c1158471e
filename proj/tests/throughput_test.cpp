#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include <rach_optim/rach_optim.hpp>

#include "oracles.hpp"

using namespace rach;

namespace {

::testing::AssertionResult close_rel(double a, double b, double rel, double floor = 1e-9)
{
    if (std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + floor) return ::testing::AssertionSuccess();
    return ::testing::AssertionFailure() << a << " vs " << b << " (diff " << std::abs(a - b) << ")";
}

PolicyView raw_view(const std::vector<double>& a, int K, int N, double eps) { return {K, N, a, eps}; }

std::vector<double> flat(const SelectionPolicy& p)
{
    const auto m = p.matrix();
    return {m.begin(), m.end()};
}

oracle::Matrix unflatten(const std::vector<double>& a, int K, int N)
{
    oracle::Matrix m(K, std::vector<double>(N));
    for (int k = 0; k < K; ++k)
        for (int n = 0; n < N; ++n) m[k][n] = a[k * N + n];
    return m;
}

} // namespace

TEST(Conditional, NoActiveDevices)
{
    std::mt19937_64 gen(1);
    EXPECT_EQ(conditional_throughput(oracle::random_policy(4, 3, gen), Mask{0}), 0.0);
}

TEST(Conditional, LoneDevice)
{
    const SelectionPolicy p(1, 3, {0.2, 0.3, 0.5}, 0.6);
    EXPECT_DOUBLE_EQ(conditional_throughput(p, Mask{1}), 0.6);
}

TEST(Conditional, TwoOnOnePreamble)
{
    const std::vector<int> assign{0, 0, 1};
    const auto p = SelectionPolicy::vertex(assign, 2, 0.75);
    EXPECT_DOUBLE_EQ(conditional_throughput(p, Mask{7}), 1.125);
}

TEST(Conditional, MatchesReferenceAndRange)
{
    std::mt19937_64 gen(2);
    for (int trial = 0; trial < 200; ++trial) {
        const int K = 1 + trial % 7, N = 1 + trial % 4;
        const auto p = oracle::random_policy(K, N, gen, 0.0, 1.0);
        const auto a = oracle::matrix_of(p);
        for (Mask x = 0; x < (Mask{1} << K); ++x) {
            const double t = conditional_throughput(p, x);
            EXPECT_NEAR(t, oracle::T(a, p.epsilon(), x), 1e-13);
            EXPECT_GE(t, 0.0);
            EXPECT_LE(t, std::min<double>(N, popcount(x)) + 1e-12);
        }
    }
}

TEST(Average, ZeroEpsilon)
{
    const auto d = from_example1(0.3, 0.2);
    EXPECT_EQ(average_throughput(SelectionPolicy::uniform(3, 2, 0.0), d), 0.0);
}

TEST(Average, TwoIndependentOnOnePreamble)
{
    const auto d = from_group_model({2, 2, 0.5});
    EXPECT_NEAR(average_throughput(SelectionPolicy::uniform(2, 1, 1.0), d), 0.5, 1e-15);
}

TEST(Average, Example1SeparateFirstDevice)
{
    const std::vector<int> assign{0, 1, 1};
    for (double eta : {-1.0, 0.0, 0.5, 1.0})
        EXPECT_NEAR(average_throughput(SelectionPolicy::vertex(assign, 2, 1.0), from_example1(0.5, eta)), 1.0, 1e-14);
}

TEST(Average, EvaluatorsAgree)
{
    std::mt19937_64 gen(3);
    for (int trial = 0; trial < 100; ++trial) {
        const int K = 1 + trial % 10, N = 1 + trial % 5;
        const auto d = JointActivityDistribution::from_probs(K, oracle::random_probs(K, gen));
        const auto p = oracle::random_policy(K, N, gen);
        const double direct = average_throughput_direct(p, d);
        const double expansion = average_throughput_expansion(p, d);
        EXPECT_TRUE(close_rel(direct, expansion, 1e-10, 0.0));
        EXPECT_TRUE(close_rel(direct, oracle::average(p, d), 1e-12, 1e-15));
        EXPECT_GE(direct, 0.0);
        EXPECT_LE(direct, N + 1e-12);
    }
}

TEST(WorstCase, SingletonEqualsAverage)
{
    std::mt19937_64 gen(4);
    const auto d = JointActivityDistribution::from_probs(4, oracle::random_probs(4, gen));
    const auto p = oracle::random_policy(4, 2, gen);
    EXPECT_NEAR(worst_case_throughput(p, UncertaintyModel::singleton(d)), average_throughput(p, d), 1e-14);
}

TEST(WorstCase, OneDeviceGreedy)
{
    const auto u = UncertaintyModel::from_bounds(1, {0.2, 0.4}, {0.6, 0.8});
    for (double eps : {0.0, 0.3, 1.0}) {
        const SelectionPolicy p(1, 1, {1.0}, eps);
        EXPECT_NEAR(worst_case_throughput(p, u), 0.4 * eps, 1e-15);
    }
}

TEST(WorstCase, DominatedBySampledPoints)
{
    std::mt19937_64 gen(5);
    for (int trial = 0; trial < 10; ++trial) {
        const int K = 2 + trial % 4;
        const auto d = JointActivityDistribution::from_probs(K, oracle::random_probs(K, gen));
        const auto u = uncertainty_from_relative_error(d, 0.4);
        const auto p = oracle::random_policy(K, 2, gen);
        const double wc = worst_case_throughput(p, u);
        const auto a = oracle::matrix_of(p);
        for (int s = 0; s < 50; ++s) {
            const auto q = oracle::random_point(u, gen);
            EXPECT_LE(wc, oracle::average(a, p.epsilon(), q) + 1e-12);
        }
    }
}

TEST(WorstCase, InfeasiblePolytopeRejected)
{
    EXPECT_THROW(UncertaintyModel::from_bounds(1, {0.7, 0.7}, {0.8, 0.8}), ValidationError);
}

TEST(SampleAverage, AllZeroSamples)
{
    const std::vector<Mask> masks(10, 0);
    EXPECT_EQ(sample_average_throughput(SelectionPolicy::uniform(3, 2, 1.0), SampleSet::from_masks(3, masks, 2)), 0.0);
}

TEST(SampleAverage, EveryMaskOnce)
{
    const std::vector<Mask> masks{0, 1, 2, 3};
    EXPECT_NEAR(sample_average_throughput(SelectionPolicy::uniform(2, 1, 1.0), SampleSet::from_masks(2, masks, 1)), 0.5,
                1e-15);
}

TEST(SampleAverage, SingleSample)
{
    std::mt19937_64 gen(6);
    const auto p = oracle::random_policy(5, 3, gen);
    const std::vector<Mask> masks{0b10110};
    EXPECT_NEAR(sample_average_throughput(p, SampleSet::from_masks(5, masks, 1)), conditional_throughput(p, Mask{0b10110}),
                1e-15);
}

TEST(SampleAverage, Unbiased)
{
    std::mt19937_64 gen(7);
    const auto d = JointActivityDistribution::from_probs(4, oracle::random_probs(4, gen));
    const auto p = oracle::random_policy(4, 2, gen);
    const double truth = average_throughput(p, d);
    std::vector<double> est;
    for (std::uint64_t seed = 0; seed < 100; ++seed)
        est.push_back(sample_average_throughput(p, sample(d, 2000, 1, seed)));
    double mean = 0.0, var = 0.0;
    for (double v : est) mean += v / est.size();
    for (double v : est) var += (v - mean) * (v - mean) / (est.size() - 1);
    EXPECT_LE(std::abs(mean - truth), 3.0 * std::sqrt(var / est.size()));
}

TEST(Approx, IndependentPairOnOnePreamble)
{
    const auto stats = pair_stats(from_group_model({2, 2, 0.5}));
    EXPECT_NEAR(approx_throughput(SelectionPolicy::uniform(2, 1, 1.0), stats), 0.75, 1e-15);
    EXPECT_EQ(approx_throughput(SelectionPolicy::uniform(2, 1, 0.0), stats), 0.0);
}

TEST(Approx, SingleDevice)
{
    const auto stats = pair_stats(from_group_model({1, 1, 0.3}));
    EXPECT_NEAR(approx_throughput(SelectionPolicy::uniform(1, 4, 1.0), stats), 0.3, 1e-15);
}

TEST(Approx, WorstCaseArithmetic)
{
    const std::vector<double> lower{0.4, 0.4};
    const std::vector<double> upper_pair{0.0, 0.3, 0.3, 0.0};
    const auto p = SelectionPolicy::uniform(2, 1, 1.0);
    EXPECT_NEAR(approx_worst_case_throughput(p, lower, upper_pair), 0.5, 1e-15);
    EXPECT_EQ(approx_worst_case_throughput(SelectionPolicy::uniform(2, 1, 0.0), lower, upper_pair), 0.0);
}

TEST(Approx, CollapsedBoundsEqualPlain)
{
    std::mt19937_64 gen(8);
    const auto d = JointActivityDistribution::from_probs(4, oracle::random_probs(4, gen));
    const auto p = oracle::random_policy(4, 3, gen);
    EXPECT_NEAR(approx_worst_case_throughput(p, uncertainty_from_relative_error(d, 0.0)),
                approx_throughput(p, pair_stats(d)), 1e-14);
}

TEST(Approx, MatchesDefinition)
{
    std::mt19937_64 gen(9);
    for (int trial = 0; trial < 20; ++trial) {
        const int K = 2 + trial % 5, N = 1 + trial % 3;
        const auto d = JointActivityDistribution::from_probs(K, oracle::random_probs(K, gen));
        const auto p = oracle::random_policy(K, N, gen);
        double marg = 0.0, pair = 0.0;
        for (Mask x = 0; x < d.size(); ++x)
            for (int k = 0; k < K; ++k) {
                if (!oracle::bit(x, k)) continue;
                marg += d.prob(x);
                for (int l = k + 1; l < K; ++l)
                    if (oracle::bit(x, l))
                        for (int n = 0; n < N; ++n) pair += d.prob(x) * p.prob(k, n) * p.prob(l, n);
            }
        const double e = p.epsilon();
        EXPECT_NEAR(approx_throughput(p, pair_stats(d)), e * marg - e * e * pair, 1e-12);
    }
}

TEST(GradQ, TwoIndependentDevices)
{
    const std::vector<int> assign{0, 0};
    const auto p = SelectionPolicy::vertex(assign, 2, 1.0);
    const auto q = grad_Q(p, from_group_model({2, 2, 0.5}), 0);
    EXPECT_NEAR(q[0], 0.0, 1e-15);
    EXPECT_NEAR(q[1], 0.5, 1e-15);
}

TEST(GradQ, ZeroEpsilon)
{
    std::mt19937_64 gen(10);
    const auto d = JointActivityDistribution::from_probs(3, oracle::random_probs(3, gen));
    for (double v : grad_Q(SelectionPolicy::uniform(3, 2, 0.0), d, 1)) EXPECT_EQ(v, 0.0);
}

TEST(GradQ, SingleDevice)
{
    const auto d = from_group_model({1, 1, 0.35});
    const auto q = grad_Q(SelectionPolicy(1, 3, {0.2, 0.3, 0.5}, 0.7), d, 0);
    for (double v : q) EXPECT_NEAR(v, 0.7 * 0.35, 1e-15);
}

TEST(GradQ, FiniteDifferences)
{
    std::mt19937_64 gen(11);
    const double h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
        const int K = 2 + trial % 5, N = 2 + trial % 3;
        const auto probs = oracle::random_probs(K, gen);
        const auto d = JointActivityDistribution::from_probs(K, probs);
        const auto p = oracle::random_policy(K, N, gen, 0.2, 0.95);
        const int k = trial % K;
        const auto q = grad_Q(p, d, k);
        auto a = oracle::matrix_of(p);
        for (int n = 0; n < N; ++n) {
            const double base = a[k][n];
            a[k][n] = base + h;
            const double up = oracle::average(a, p.epsilon(), probs);
            a[k][n] = base - h;
            const double down = oracle::average(a, p.epsilon(), probs);
            a[k][n] = base;
            EXPECT_TRUE(close_rel(q[n], (up - down) / (2 * h), 1e-5));
        }
    }
}

TEST(GradQ, ScaleInvariantArgmax)
{
    std::mt19937_64 gen(12);
    const auto d = JointActivityDistribution::from_probs(4, oracle::random_probs(4, gen));
    const auto q = grad_Q(oracle::random_policy(4, 3, gen), d, 2);
    std::vector<double> scaled(q);
    for (auto& v : scaled) v *= 7.5;
    EXPECT_EQ(std::max_element(q.begin(), q.end()) - q.begin(),
              std::max_element(scaled.begin(), scaled.end()) - scaled.begin());
}

TEST(QPolynomial, TwoIndependentOnOnePreamble)
{
    const auto c = q_coefficients(SelectionPolicy::uniform(2, 1, 1.0), from_group_model({2, 2, 0.5}));
    ASSERT_EQ(c.size(), 2u);
    EXPECT_NEAR(c[0], 1.0, 1e-15);
    EXPECT_NEAR(c[1], -1.0, 1e-15);
}

TEST(QPolynomial, SingleDeviceConstant)
{
    const auto c = q_coefficients(SelectionPolicy::uniform(1, 2, 0.4), from_group_model({1, 1, 0.3}));
    ASSERT_EQ(c.size(), 1u);
    EXPECT_NEAR(q_eval(c, 0.1), 0.3, 1e-15);
    EXPECT_NEAR(q_eval(c, 0.9), 0.3, 1e-15);
}

TEST(QPolynomial, FiniteDifferences)
{
    std::mt19937_64 gen(13);
    const double h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
        const int K = 1 + trial % 8, N = 1 + trial % 4;
        const auto probs = oracle::random_probs(K, gen);
        const auto d = JointActivityDistribution::from_probs(K, probs);
        const auto p = oracle::random_policy(K, N, gen, 0.1, 0.9);
        const auto a = oracle::matrix_of(p);
        const double e = p.epsilon();
        const double fd = (oracle::average(a, e + h, probs) - oracle::average(a, e - h, probs)) / (2 * h);
        EXPECT_TRUE(close_rel(q_eval(q_coefficients(p, d), e), fd, 1e-5));
        EXPECT_TRUE(close_rel(average_from_q(q_coefficients(p, d), e), oracle::average(a, e, probs), 1e-12, 1e-14));
    }
}

TEST(GradG, PairBothOnPreamble)
{
    const auto p = SelectionPolicy::uniform(2, 1, 1.0);
    EXPECT_NEAR(grad_g(p, Mask{3}, 0)[0], -1.0, 1e-15);
}

TEST(GradG, AloneOrZeroEpsilon)
{
    std::mt19937_64 gen(14);
    const auto p = oracle::random_policy(4, 3, gen);
    for (double v : grad_g(p, Mask{0b0100}, 2)) EXPECT_NEAR(v, 1.0, 1e-15);
    const SelectionPolicy z(4, 3, flat(p), 0.0);
    for (double v : grad_g(z, Mask{0b1111}, 1)) EXPECT_NEAR(v, 1.0, 1e-15);
}

TEST(GradG, FiniteDifferences)
{
    std::mt19937_64 gen(15);
    const double h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
        const int K = 2 + trial % 6, N = 1 + trial % 4;
        const auto p = oracle::random_policy(K, N, gen, 0.2, 1.0);
        std::uniform_int_distribution<Mask> pick(1, (Mask{1} << K) - 1);
        const Mask x = pick(gen);
        const int k = lowest_bit(x);
        const auto g = grad_g(p, x, k);
        auto a = oracle::matrix_of(p);
        for (int n = 0; n < N; ++n) {
            const double base = a[k][n];
            a[k][n] = base + h;
            const double up = oracle::T(a, p.epsilon(), x);
            a[k][n] = base - h;
            const double down = oracle::T(a, p.epsilon(), x);
            a[k][n] = base;
            EXPECT_TRUE(close_rel(p.epsilon() * g[n], (up - down) / (2 * h), 1e-5));
        }
    }
}

TEST(GradG, UnnormalizedViewMatchesScaledPolicy)
{
    // Evaluating B = eps * A with eps = 1 gives the same throughput.
    std::mt19937_64 gen(16);
    const auto p = oracle::random_policy(5, 3, gen);
    std::vector<double> b = flat(p);
    for (auto& v : b) v *= p.epsilon();
    const auto view = raw_view(b, 5, 3, 1.0);
    for (Mask x = 0; x < 32; ++x)
        EXPECT_NEAR(conditional_throughput(view, x), oracle::T(unflatten(b, 5, 3), 1.0, x), 1e-14);
}
