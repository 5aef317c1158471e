#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "activity.hpp"
#include "barrier.hpp"
#include "bcd.hpp"
#include "errors.hpp"
#include "numeric.hpp"
#include "policy.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "throughput.hpp"

namespace rach {

struct ScaConfig {
    double gamma = 0.3;
    double mu = 1e-4; // stop once ||B(s) - B(s-1)||_F <= mu
    int max_iterations = 500;
    BarrierConfig barrier;
    int restarts = 3;
    std::uint64_t seed = 0;
    int max_devices = 12;
    double min_epsilon = 1e-6;
    // Extra starting policies, run in addition to the random vertex starts.
    std::vector<SelectionPolicy> warm_starts = {};

    void validate() const
    {
        require(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1]");
        require(mu > 0.0, "mu must be positive");
        require(max_iterations > 0, "max_iterations must be positive");
        require(restarts >= 0, "restarts must be nonnegative");
        require(restarts > 0 || !warm_starts.empty(), "need at least one start");
        require(max_devices >= 1 && max_devices <= kMaxExactDevices, "max_devices out of range");
        require(min_epsilon > 0.0, "min_epsilon must be positive");
        barrier.validate();
    }
};

// (B, lambda, eps, nu) with B = eps * A stored row-major K x N.
struct DualIterate {
    int devices = 0;
    int preambles = 0;
    std::vector<double> b;
    std::vector<double> lambda;
    double epsilon = 1.0;
    double nu = 0.0;

    PolicyView view() const { return {devices, preambles, b, 1.0}; }
};

/*
 * Coefficients of the dual objective
 *   nu_coeff * nu - sum price_x lambda_x + sum base_x T(B, 1, x).
 * When the polytope is a single point (sum lower = 1 or sum upper = 1) the
 * dual is degenerate along nu; it is collapsed to the plain average with
 * base = that point and no priced patterns.
 */
struct RobustWeights {
    bool collapsed = false;
    std::vector<double> base;
    std::vector<double> price;
    double nu_coeff = 0.0;
};

inline RobustWeights robust_weights(const UncertaintyModel& u)
{
    RobustWeights w;
    const auto lo = u.lower(), hi = u.upper();
    if (u.lower_sum() >= 1.0 - 1e-12 || u.upper_sum() <= 1.0 + 1e-12) {
        w.collapsed = true;
        const auto point = u.lower_sum() >= 1.0 - 1e-12 ? lo : hi;
        w.base.assign(point.begin(), point.end());
        w.price.assign(u.size(), 0.0);
        return w;
    }
    w.base.assign(lo.begin(), lo.end());
    w.price.resize(u.size());
    for (std::size_t m = 0; m < u.size(); ++m) w.price[m] = hi[m] - lo[m];
    w.nu_coeff = u.lower_sum() - 1.0;
    return w;
}

inline double dual_objective(const DualIterate& it, const RobustWeights& w)
{
    CompensatedSum s;
    s += w.nu_coeff * it.nu;
    std::vector<int> active;
    for (Mask m = 0; m < w.base.size(); ++m) {
        if (w.price[m] != 0.0) s += -w.price[m] * it.lambda[m];
        if (w.base[m] != 0.0) {
            detail::mask_devices(m, active);
            s += w.base[m] * conditional_throughput(it.view(), active);
        }
    }
    return s.value();
}

inline double dual_objective(const DualIterate& it, const UncertaintyModel& u)
{
    return dual_objective(it, robust_weights(u));
}

// Vertex start: B = (e_{n_k}), lambda = 1, eps = 1, nu = 0.
inline DualIterate initial_iterate(std::span<const int> assign, int preambles)
{
    DualIterate it;
    it.devices = static_cast<int>(assign.size());
    it.preambles = preambles;
    it.b.assign(assign.size() * static_cast<std::size_t>(preambles), 0.0);
    for (std::size_t k = 0; k < assign.size(); ++k) {
        require(assign[k] >= 0 && assign[k] < preambles, "preamble index out of range");
        it.b[k * preambles + assign[k]] = 1.0;
    }
    it.lambda.assign(pattern_count(it.devices), 1.0);
    return it;
}

// B = eps * A with (lambda, nu) optimal for the inner problem at that B.
inline DualIterate iterate_from_policy(const SelectionPolicy& policy, const UncertaintyModel& u)
{
    DualIterate it;
    it.devices = policy.devices();
    it.preambles = policy.preambles();
    it.epsilon = policy.epsilon();
    it.b.assign(policy.matrix().begin(), policy.matrix().end());
    for (double& v : it.b) v *= it.epsilon;
    it.lambda.assign(u.size(), 0.0);
    if (robust_weights(u).collapsed) return it;
    const auto wc = worst_case(policy, u);
    const double pivot = wc.coefficients[wc.pivot];
    it.nu = -pivot;
    for (std::size_t m = 0; m < u.size(); ++m) it.lambda[m] = std::max(0.0, pivot - wc.coefficients[m]);
    return it;
}

inline SelectionPolicy recover_policy(const DualIterate& it)
{
    require(it.epsilon > 0.0, "cannot recover a policy from eps = 0");
    std::vector<double> a(it.b.size());
    const int N = it.preambles;
    for (int k = 0; k < it.devices; ++k) {
        double total = 0.0;
        for (int n = 0; n < N; ++n) total += std::max(0.0, it.b[static_cast<std::size_t>(k) * N + n]);
        require(total > 0.0, "degenerate row in recovered selection matrix");
        for (int n = 0; n < N; ++n) {
            const std::size_t i = static_cast<std::size_t>(k) * N + n;
            a[i] = std::max(0.0, it.b[i]) / total;
        }
    }
    return SelectionPolicy(it.devices, N, std::move(a), std::min(1.0, it.epsilon));
}

// ===========================================================================
// Convex subproblem around an expansion point
// ===========================================================================

struct SubproblemSpec {
    int devices = 0;
    int preambles = 0;
    DualIterate center;
    RobustWeights weights;
    double objective_constant = 0.0; // sum base_x T(B0, 1, x)
    std::vector<double> objective_grad; // K x N
    double objective_curvature = 0.0;   // L_obj
    std::vector<double> throughput;     // T(B0, 1, x) per pattern
    std::vector<double> grad;           // per pattern K x N block of x_k g_{k,n}(B0, 1, x)
    std::vector<double> curvature;      // L_x per pattern
    std::vector<Mask> priced;           // patterns whose constraint is kept

    std::size_t block() const { return static_cast<std::size_t>(devices) * preambles; }

    double minorant_objective(std::span<const double> b, std::span<const double> lambda, double nu) const
    {
        CompensatedSum s;
        s += objective_constant;
        s += weights.nu_coeff * nu;
        for (std::size_t m = 0; m < weights.price.size(); ++m)
            if (weights.price[m] != 0.0) s += -weights.price[m] * lambda[m];
        double sq = 0.0;
        for (std::size_t i = 0; i < block(); ++i) {
            const double d = b[i] - center.b[i];
            s += objective_grad[i] * d;
            sq += d * d;
        }
        s += -0.5 * objective_curvature * sq;
        return s.value();
    }

    // Minorant of T(B, 1, x) at the expansion point, without nu and lambda.
    double constraint_part(std::span<const double> b, Mask x) const
    {
        const int N = preambles;
        const double* g = grad.data() + x * block();
        double lin = 0.0, sq = 0.0;
        for (Mask rest = x; rest; rest &= rest - 1) {
            const int k = lowest_bit(rest);
            for (int n = 0; n < N; ++n) {
                const std::size_t i = static_cast<std::size_t>(k) * N + n;
                const double d = b[i] - center.b[i];
                lin += g[i] * d;
                sq += d * d;
            }
        }
        return throughput[x] + lin - 0.5 * curvature[x] * sq;
    }

    double minorant_constraint(std::span<const double> b, double lambda_x, double nu, Mask x) const
    {
        return nu + lambda_x + constraint_part(b, x);
    }
};

inline SubproblemSpec build_subproblem(const DualIterate& center, const UncertaintyModel& u)
{
    require(center.devices == u.devices(), "iterate and uncertainty model disagree on K");
    const int K = center.devices, N = center.preambles;
    SubproblemSpec spec;
    spec.devices = K;
    spec.preambles = N;
    spec.center = center;
    spec.weights = robust_weights(u);
    const std::size_t size = u.size(), blk = spec.block();
    spec.throughput.resize(size);
    spec.grad.assign(size * blk, 0.0);
    spec.curvature.resize(size);
    spec.objective_grad.assign(blk, 0.0);

    const auto view = center.view();
    const auto& base = spec.weights.base;
    std::vector<int> active;
    std::vector<CompensatedSum> og(blk);
    CompensatedSum constant;
    std::vector<double> pair_mass(static_cast<std::size_t>(K) * K, 0.0);
    for (Mask x = 0; x < size; ++x) {
        detail::mask_devices(x, active);
        const double ones = static_cast<double>(active.size());
        spec.throughput[x] = conditional_throughput(view, active);
        spec.curvature[x] = std::sqrt(static_cast<double>(N)) * ones * ones;
        if (active.empty()) continue;
        const auto g = grad_g_all(view, active);
        double* dst = spec.grad.data() + x * blk;
        for (int k : active)
            for (int n = 0; n < N; ++n) {
                const std::size_t i = static_cast<std::size_t>(k) * N + n;
                dst[i] = g[i];
                if (base[x] != 0.0) og[i] += base[x] * g[i];
            }
        if (base[x] != 0.0) {
            constant += base[x] * spec.throughput[x];
            for (int k : active)
                for (int l : active)
                    if (k != l) pair_mass[static_cast<std::size_t>(k) * K + l] += base[x] * ones;
        }
    }
    for (std::size_t i = 0; i < blk; ++i) spec.objective_grad[i] = og[i].value();
    spec.objective_constant = constant.value();
    double sq = 0.0;
    for (double v : pair_mass) sq += v * v;
    spec.objective_curvature = std::sqrt(static_cast<double>(N) * sq);
    if (!spec.weights.collapsed)
        for (Mask x = 0; x < size; ++x)
            if (spec.weights.price[x] > 0.0) spec.priced.push_back(x);
    return spec;
}

namespace detail {

/*
 * Barrier form of the subproblem. Variables z = [B, eps, nu, lambda_priced]
 * (nu and lambda absent when collapsed). Inequalities: b > 0, eps < 1,
 * lambda > 0, c_x = phi_x(B) + nu + lambda_x > 0. Equalities
 * sum_n b_{k,n} = eps are kept by projecting Newton steps. lambda is
 * eliminated from each Newton system by a Schur complement since every
 * lambda_x touches a single constraint.
 */
class SubproblemBarrier {
public:
    explicit SubproblemBarrier(const SubproblemSpec& spec)
        : s_(spec), nb_(spec.block()), dual_(!spec.weights.collapsed),
          ny_(nb_ + 1 + (dual_ ? 1 : 0)), np_(spec.priced.size())
    {
    }

    std::size_t size() const { return ny_ + np_; }
    std::size_t inequality_count() const { return nb_ + 1 + 2 * np_; }
    std::size_t eps_index() const { return nb_; }
    std::size_t nu_index() const { return nb_ + 1; }
    std::size_t lambda_index(std::size_t j) const { return ny_ + j; }
    bool dual() const { return dual_; }

    double nu(const Eigen::VectorXd& z) const { return dual_ ? z[nu_index()] : 0.0; }
    std::span<const double> b(const Eigen::VectorXd& z) const { return {z.data(), nb_}; }

    double slack(const Eigen::VectorXd& z, std::size_t j) const
    {
        return s_.constraint_part(b(z), s_.priced[j]) + nu(z) + z[lambda_index(j)];
    }

    bool strictly_feasible(const Eigen::VectorXd& z) const
    {
        if (!z.allFinite()) return false;
        for (std::size_t i = 0; i < nb_; ++i)
            if (!(z[i] > 0.0)) return false;
        if (!(z[eps_index()] < 1.0)) return false;
        for (std::size_t j = 0; j < np_; ++j)
            if (!(z[lambda_index(j)] > 0.0) || !(slack(z, j) > 0.0)) return false;
        return true;
    }

    double objective(const Eigen::VectorXd& z) const
    {
        double v = s_.objective_constant + s_.weights.nu_coeff * nu(z);
        double sq = 0.0;
        for (std::size_t i = 0; i < nb_; ++i) {
            const double d = z[i] - s_.center.b[i];
            v += s_.objective_grad[i] * d;
            sq += d * d;
        }
        v -= 0.5 * s_.objective_curvature * sq;
        for (std::size_t j = 0; j < np_; ++j) v -= s_.weights.price[s_.priced[j]] * z[lambda_index(j)];
        return v;
    }

    double barrier_value(const Eigen::VectorXd& z, double t) const
    {
        double v = -t * objective(z);
        for (std::size_t i = 0; i < nb_; ++i) v -= std::log(z[i]);
        v -= std::log(1.0 - z[eps_index()]);
        for (std::size_t j = 0; j < np_; ++j) {
            v -= std::log(z[lambda_index(j)]);
            v -= std::log(slack(z, j));
        }
        return v;
    }

    Eigen::VectorXd newton_step(const Eigen::VectorXd& z, double t, double& dec2) const
    {
        const int K = s_.devices, N = s_.preambles;
        const double L = s_.objective_curvature;
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ny_), static_cast<Eigen::Index>(ny_));
        Eigen::VectorXd gy = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ny_));
        for (std::size_t i = 0; i < nb_; ++i) {
            const double bi = z[i], d = bi - s_.center.b[i];
            H(i, i) = t * L + 1.0 / (bi * bi);
            gy[i] = -t * (s_.objective_grad[i] - L * d) - 1.0 / bi;
        }
        const double room = 1.0 - z[eps_index()];
        H(eps_index(), eps_index()) = 1.0 / (room * room);
        gy[eps_index()] = 1.0 / room;
        if (dual_) gy[nu_index()] = -t * s_.weights.nu_coeff;
        Eigen::VectorXd reduced = gy;

        // Per-constraint data, reused for the back substitution. The rank-one
        // terms r_j d_j d_j^T are gathered as columns of W for one SYRK.
        std::vector<double> c(np_), glam(np_), dvals;
        std::vector<std::size_t> offsets(np_ + 1, 0);
        std::vector<int> dindex;
        dvals.reserve(np_ * (nb_ + 1));
        dindex.reserve(np_ * (nb_ + 1));
        Eigen::MatrixXd W = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ny_), static_cast<Eigen::Index>(np_));
        for (std::size_t j = 0; j < np_; ++j) {
            const Mask x = s_.priced[j];
            const double lam = z[lambda_index(j)];
            const double cj = slack(z, j);
            c[j] = cj;
            glam[j] = t * s_.weights.price[x] - 1.0 / lam - 1.0 / cj;
            const double* g = s_.grad.data() + x * nb_;
            const double Lx = s_.curvature[x];
            const double r = 1.0 / (lam * lam + cj * cj);
            const double root = std::sqrt(r);
            const double share = lam * lam * r;
            const auto col = static_cast<Eigen::Index>(j);
            const auto add = [&](int i, double dp) {
                dvals.push_back(dp);
                dindex.push_back(i);
                gy[i] -= dp / cj;
                reduced[i] -= dp / cj + dp * share * glam[j];
                W(i, col) = root * dp;
            };
            for (Mask rest = x; rest; rest &= rest - 1) {
                const int k = lowest_bit(rest);
                for (int n = 0; n < N; ++n) {
                    const int i = k * N + n;
                    add(i, g[i] - Lx * (z[i] - s_.center.b[i]));
                    H(i, i) += Lx / cj;
                }
            }
            add(static_cast<int>(nu_index()), 1.0);
            offsets[j + 1] = dvals.size();
        }
        if (np_ > 0) H.selfadjointView<Eigen::Lower>().rankUpdate(W);
        H.triangularView<Eigen::StrictlyUpper>() = H.transpose();

        Eigen::MatrixXd E = Eigen::MatrixXd::Zero(K, static_cast<Eigen::Index>(ny_));
        for (int k = 0; k < K; ++k) {
            for (int n = 0; n < N; ++n) E(k, k * N + n) = 1.0;
            E(k, static_cast<Eigen::Index>(eps_index())) = -1.0;
        }
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
        if (ldlt.info() != Eigen::Success) throw NumericalError("barrier Hessian factorization failed");
        const Eigen::VectorXd u = ldlt.solve(reduced);
        const Eigen::MatrixXd Z = ldlt.solve(E.transpose());
        const Eigen::MatrixXd S = E * Z;
        const Eigen::VectorXd w = S.ldlt().solve(E * u);
        const Eigen::VectorXd dy = -u + Z * w;

        Eigen::VectorXd dz(static_cast<Eigen::Index>(size()));
        dz.head(static_cast<Eigen::Index>(ny_)) = dy;
        dec2 = -gy.dot(dy);
        for (std::size_t j = 0; j < np_; ++j) {
            double proj = 0.0;
            for (std::size_t p = offsets[j]; p < offsets[j + 1]; ++p) proj += dvals[p] * dy[dindex[p]];
            const double lam = z[lambda_index(j)];
            const double D = 1.0 / (lam * lam) + 1.0 / (c[j] * c[j]);
            const double dl = -(glam[j] + proj / (c[j] * c[j])) / D;
            dz[static_cast<Eigen::Index>(lambda_index(j))] = dl;
            dec2 -= glam[j] * dl;
        }
        return dz;
    }

private:
    const SubproblemSpec& s_;
    std::size_t nb_;
    bool dual_;
    std::size_t ny_;
    std::size_t np_;
};

} // namespace detail

struct SubproblemSolution {
    DualIterate point;
    double gap = 0.0;
    int stages = 0;
    int newton_steps = 0;
    // Barrier estimates of the constraint multipliers, per pattern.
    std::vector<double> multipliers;
};

/*
 * Maximizes the concave minorant subject to the minorant constraints. The
 * barrier starts from the expansion point pulled slightly into the
 * interior, with every priced lambda_x raised until its constraint has
 * slack at least one.
 */
inline SubproblemSolution solve_subproblem(const SubproblemSpec& spec, const BarrierConfig& config = {})
{
    const detail::SubproblemBarrier problem(spec);
    const int N = spec.preambles;
    const std::size_t nb = spec.block();
    const DualIterate& c = spec.center;
    require(c.epsilon > 0.0, "expansion point has eps = 0");

    constexpr double theta = 1e-2;
    const double eps0 = std::min(c.epsilon, 1.0 - theta);
    const double scale = eps0 / c.epsilon;
    Eigen::VectorXd z(static_cast<Eigen::Index>(problem.size()));
    for (std::size_t i = 0; i < nb; ++i)
        z[static_cast<Eigen::Index>(i)] = (1.0 - theta) * scale * std::max(0.0, c.b[i]) + theta * eps0 / N;
    // Row sums can drift from eps0 by rounding; the equality is enforced on the exact row sums.
    double eps_mean = 0.0;
    for (int k = 0; k < spec.devices; ++k) {
        double row = 0.0;
        for (int n = 0; n < N; ++n) row += z[k * N + n];
        eps_mean += row;
    }
    eps_mean /= spec.devices;
    for (int k = 0; k < spec.devices; ++k) {
        double row = 0.0;
        for (int n = 0; n < N; ++n) row += z[k * N + n];
        for (int n = 0; n < N; ++n) z[k * N + n] *= eps_mean / row;
    }
    z[static_cast<Eigen::Index>(problem.eps_index())] = eps_mean;
    if (problem.dual()) z[static_cast<Eigen::Index>(problem.nu_index())] = c.nu;
    const double nu0 = problem.dual() ? c.nu : 0.0;
    for (std::size_t j = 0; j < spec.priced.size(); ++j) {
        const Mask x = spec.priced[j];
        const double phi = spec.constraint_part(std::span<const double>(z.data(), nb), x);
        z[static_cast<Eigen::Index>(problem.lambda_index(j))] = std::max({c.lambda[x], 1.0 - nu0 - phi, theta});
    }
    if (!problem.strictly_feasible(z)) {
        std::string why = "phase-I could not find a strictly feasible point (eps = " +
                          std::to_string(eps_mean) + ")";
        throw NumericalError(why);
    }

    const auto res = barrier_maximize(problem, std::move(z), config);
    SubproblemSolution out;
    out.gap = res.gap;
    out.stages = res.stages;
    out.newton_steps = res.newton_steps;
    DualIterate& p = out.point;
    p.devices = spec.devices;
    p.preambles = N;
    p.b.assign(res.z.data(), res.z.data() + nb);
    p.epsilon = res.z[static_cast<Eigen::Index>(problem.eps_index())];
    p.nu = problem.nu(res.z);
    // Newton steps keep row sums only up to rounding.
    for (int k = 0; k < spec.devices; ++k) {
        double row = 0.0;
        for (int n = 0; n < N; ++n) row += p.b[static_cast<std::size_t>(k) * N + n];
        for (int n = 0; n < N; ++n) p.b[static_cast<std::size_t>(k) * N + n] *= p.epsilon / row;
    }
    const std::size_t size = spec.throughput.size();
    p.lambda.assign(size, 0.0);
    out.multipliers.assign(size, 0.0);
    for (std::size_t j = 0; j < spec.priced.size(); ++j) {
        const Mask x = spec.priced[j];
        p.lambda[x] = res.z[static_cast<Eigen::Index>(problem.lambda_index(j))];
        out.multipliers[x] = 1.0 / (res.t * problem.slack(res.z, j));
    }
    // Unpriced lambda_x cost nothing: take the smallest feasible value.
    for (Mask x = 0; x < size; ++x)
        if (spec.weights.price[x] <= 0.0 || spec.weights.collapsed)
            p.lambda[x] = std::max(0.0, -p.nu - spec.constraint_part(p.b, x));
    return out;
}

// (1 - gamma) * old + gamma * solved, componentwise.
inline DualIterate sca_step(const DualIterate& old, const DualIterate& solved, double gamma)
{
    require(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1]");
    require(old.b.size() == solved.b.size() && old.lambda.size() == solved.lambda.size(),
            "iterates have different shapes");
    DualIterate next = old;
    const auto mix = [gamma](double a, double b) { return gamma == 1.0 ? b : (1.0 - gamma) * a + gamma * b; };
    for (std::size_t i = 0; i < next.b.size(); ++i) next.b[i] = mix(old.b[i], solved.b[i]);
    for (std::size_t i = 0; i < next.lambda.size(); ++i) next.lambda[i] = mix(old.lambda[i], solved.lambda[i]);
    next.epsilon = mix(old.epsilon, solved.epsilon);
    next.nu = mix(old.nu, solved.nu);
    return next;
}

/*
 * First-order stationarity residual of the dual-form worst-case problem at
 * B = eps * A, with (lambda, nu) set to the exact inner optimum for that B.
 * The constraint multipliers are then p* - lower for the greedy worst-case p*,
 * so the only remaining conditions are on (B, eps): the gradient
 * G_{k,n} = sum_x p*_x x_k g_{k,n}(B, 1, x) must equal a row constant w_k on
 * entries with b_{k,n} > active_tol and not exceed it elsewhere, and
 * sum_k w_k must vanish (or be >= 0 when eps is at 1). Returns the infinity
 * norm of the violations for the best per-row w_k.
 */
inline double kkt_residual(const SelectionPolicy& policy, const UncertaintyModel& u, double active_tol = 1e-6)
{
    require_matching(policy, u.devices());
    const int K = policy.devices(), N = policy.preambles();
    const auto weights = robust_weights(u);
    const std::vector<double> point = weights.collapsed ? weights.base : worst_case(policy, u).distribution;
    std::vector<double> b(policy.matrix().begin(), policy.matrix().end());
    for (double& v : b) v *= policy.epsilon();
    const PolicyView view{K, N, b, 1.0};
    std::vector<double> G(b.size(), 0.0);
    std::vector<int> active;
    for (Mask x = 1; x < point.size(); ++x) {
        if (point[x] == 0.0) continue;
        detail::mask_devices(x, active);
        const auto g = grad_g_all(view, active);
        for (int k : active)
            for (int n = 0; n < N; ++n) G[k * N + n] += point[x] * g[k * N + n];
    }
    double residual = 0.0, wsum = 0.0;
    for (int k = 0; k < K; ++k) {
        double lo = INFINITY, hi = -INFINITY, top_active = -INFINITY;
        for (int n = 0; n < N; ++n) {
            const double v = G[k * N + n];
            if (b[k * N + n] > active_tol) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            } else {
                top_active = std::max(top_active, v);
            }
        }
        if (lo == INFINITY) {
            wsum += top_active;
            continue;
        }
        const double upper = std::max(hi, top_active);
        const double w = 0.5 * (lo + upper);
        residual = std::max(residual, 0.5 * (upper - lo));
        wsum += w;
    }
    const bool at_top = policy.epsilon() >= 1.0 - active_tol;
    residual = std::max(residual, at_top ? std::max(0.0, -wsum) : std::abs(wsum));
    return residual;
}

namespace detail {

inline OptimizerReport robust_sca_single(const UncertaintyModel& u, DualIterate it, const ScaConfig& config)
{
    OptimizerReport report{.algorithm = "robust-sca", .policy = SelectionPolicy::uniform(it.devices, it.preambles, 1.0)};
    report.seed = config.seed;
    const auto weights = robust_weights(u);
    const SelectionPolicy start = recover_policy(it);
    for (int s = 1; s <= config.max_iterations; ++s) {
        const auto spec = build_subproblem(it, u);
        const auto solved = solve_subproblem(spec, config.barrier);
        DualIterate next = sca_step(it, solved.point, config.gamma);
        double diff = 0.0;
        for (std::size_t i = 0; i < next.b.size(); ++i) diff += (next.b[i] - it.b[i]) * (next.b[i] - it.b[i]);
        it = std::move(next);
        report.trajectory.push_back(dual_objective(it, weights));
        report.iterations = s;
        if (it.epsilon < config.min_epsilon)
            throw NumericalError("robust SCA iterate degenerated to eps = " + std::to_string(it.epsilon));
        if (std::sqrt(diff) <= config.mu) {
            report.termination = Termination::converged;
            break;
        }
    }
    report.policy = recover_policy(it);
    report.objective = worst_case_throughput(report.policy, u);
    // The barrier keeps iterates interior, so a start already at the optimum
    // can come back marginally worse.
    if (const double w = worst_case_throughput(start, u); w > report.objective) {
        report.policy = start;
        report.objective = w;
    }
    report.kkt_residual = kkt_residual(report.policy, u);
    return report;
}

} // namespace detail

/*
 * Successive convex approximation of the worst-case problem in its dual
 * form. Each start (random vertex with lambda = 1, eps = 1, nu = 0, plus any
 * warm-start policies) runs until ||B(s) - B(s-1)||_F <= mu. The best
 * recovered policy by exact worst-case throughput is returned.
 */
inline OptimizerReport run_robust_sca(const UncertaintyModel& u, int preambles, const ScaConfig& config = {})
{
    config.validate();
    require(preambles >= 1, "N must be at least 1");
    const int K = u.devices();
    if (K > config.max_devices)
        throw CapacityError("robust SCA keeps 2^K dual variables; K = " + std::to_string(K) +
                            " exceeds the limit of " + std::to_string(config.max_devices) +
                            " (use the low-complexity robust path)");
    const auto weights = robust_weights(u);
    require(weights.base.size() > 1 && (u.upper_sum() - u.upper()[0]) > 0.0,
            "every distribution in the polytope has p_0 = 1");

    std::vector<DualIterate> starts;
    const CounterRng root(config.seed);
    for (int r = 0; r < config.restarts; ++r) {
        CounterRng rng = root.split(static_cast<std::uint64_t>(r));
        starts.push_back(initial_iterate(random_assignment(K, preambles, rng), preambles));
    }
    for (const auto& p : config.warm_starts) {
        require(p.devices() == K && p.preambles() == preambles, "warm start has the wrong shape");
        require(p.epsilon() >= config.min_epsilon, "warm start has eps = 0");
        starts.push_back(iterate_from_policy(p, u));
    }
    std::vector<std::optional<OptimizerReport>> runs(starts.size());
    parallel_for(starts.size(), [&](std::size_t r) { runs[r] = detail::robust_sca_single(u, starts[r], config); });
    std::vector<OptimizerReport> done;
    for (auto& r : runs) done.push_back(std::move(*r));
    return merge_restarts(std::move(done));
}

// Low-complexity robust path: the approximate worst case uses lower
// marginals and upper pairwise probabilities. Restarts are ranked by the
// exact worst-case throughput.
inline OptimizerReport run_robust_lowcomp(const UncertaintyModel& u, int preambles, const BcdConfig& config = {})
{
    auto report = run_bcd_lowcomp(u.robust_pair_stats(), preambles, config,
                                  [&u](const SelectionPolicy& p) { return worst_case_throughput(p, u); });
    report.algorithm = "robust-lowcomp";
    return report;
}

// Same with bounds from a generative model, for K beyond the dense cap.
inline OptimizerReport run_robust_lowcomp(const PairStats& robust_stats, int preambles, const BcdConfig& config = {})
{
    auto report = run_bcd_lowcomp(robust_stats, preambles, config);
    report.algorithm = "robust-lowcomp";
    return report;
}

} // namespace rach
