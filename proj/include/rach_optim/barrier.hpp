#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "errors.hpp"

namespace rach {

struct BarrierConfig {
    double initial_t = 1.0;
    double t_multiplier = 10.0;
    // Stop once the duality gap bound m / t drops below this.
    double gap_tolerance = 1e-7;
    // Centering stops when half the squared Newton decrement is below this.
    double newton_tolerance = 1e-10;
    int max_newton_steps = 200;
    int max_stages = 60;

    void validate() const
    {
        require(initial_t > 0.0, "barrier initial t must be positive");
        require(t_multiplier > 1.0, "barrier multiplier must exceed 1");
        require(gap_tolerance > 0.0 && newton_tolerance > 0.0, "barrier tolerances must be positive");
        require(max_newton_steps > 0 && max_stages > 0, "barrier step limits must be positive");
    }
};

struct BarrierResult {
    Eigen::VectorXd z;
    double t = 0.0;
    double gap = 0.0;
    int stages = 0;
    int newton_steps = 0;
};

/*
 * Log-barrier method for a concave maximization with inequality
 * constraints. The problem supplies
 *   std::size_t inequality_count() const;
 *   bool strictly_feasible(const Eigen::VectorXd& z) const;
 *   double barrier_value(const Eigen::VectorXd& z, double t) const;
 *       // -t * objective - sum log(slack), minimized
 *   Eigen::VectorXd newton_step(const Eigen::VectorXd& z, double t, double& decrement_sq) const;
 * and z must start strictly feasible. Equality constraints, if any, are the
 * problem's business: its Newton steps must stay in their null space.
 */
template <class Problem>
BarrierResult barrier_maximize(const Problem& problem, Eigen::VectorXd z, const BarrierConfig& config)
{
    config.validate();
    if (!problem.strictly_feasible(z))
        throw NumericalError("barrier start point is not strictly feasible");
    const double m = static_cast<double>(problem.inequality_count());
    BarrierResult out;
    double t = config.initial_t;
    for (int stage = 0; stage < config.max_stages; ++stage) {
        ++out.stages;
        for (int step = 0; step < config.max_newton_steps; ++step) {
            double dec2 = 0.0;
            const Eigen::VectorXd dz = problem.newton_step(z, t, dec2);
            if (!dz.allFinite() || !std::isfinite(dec2))
                throw NumericalError("barrier Newton step is not finite");
            if (dec2 / 2.0 <= config.newton_tolerance) break;
            const double f0 = problem.barrier_value(z, t);
            double s = 1.0;
            Eigen::VectorXd trial = z + dz;
            while (!problem.strictly_feasible(trial) && s > 1e-20) {
                s *= 0.5;
                trial = z + s * dz;
            }
            while (s > 1e-20 && problem.barrier_value(trial, t) > f0 - 0.25 * s * dec2) {
                s *= 0.5;
                trial = z + s * dz;
            }
            if (s <= 1e-20) break; // no progress possible at this precision
            const double f1 = problem.barrier_value(trial, t);
            z = std::move(trial);
            ++out.newton_steps;
            // Rounding floor: the decrement can stall above the tolerance at large t.
            if (f0 - f1 <= 1e-13 * std::max(1.0, std::abs(f0))) break;
        }
        out.gap = m / t;
        if (out.gap <= config.gap_tolerance) break;
        t *= config.t_multiplier;
    }
    out.t = t;
    out.z = std::move(z);
    return out;
}

} // namespace rach
