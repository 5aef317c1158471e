#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace rach {

namespace detail {

// Parlett-Reinsch style balancing with power-of-two scalings, so the
// eigenvalues are unchanged up to rounding.
inline void balance(Eigen::MatrixXd& m)
{
    const Eigen::Index n = m.rows();
    constexpr double gamma = 0.9;
    bool changed = true;
    while (changed) {
        changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double row = m.row(i).lpNorm<1>();
            const double col = m.col(i).lpNorm<1>();
            if (row == 0.0 || col == 0.0) continue;
            int exponent = 0;
            std::frexp(row / col, &exponent);
            exponent /= 2;
            if (exponent == 0) continue;
            const double scaled_col = std::ldexp(col, exponent);
            const double scaled_row = std::ldexp(row, -exponent);
            if (scaled_col + scaled_row < gamma * (col + row)) {
                changed = true;
                m.row(i) *= std::ldexp(1.0, -exponent);
                m.col(i) *= std::ldexp(1.0, exponent);
            }
        }
    }
}

} // namespace detail

/*
 * All complex roots of c_0 + c_1 z + ... + c_d z^d as eigenvalues of the
 * balanced companion matrix. Leading coefficients that are negligible
 * relative to the largest one are dropped first, which lowers the degree.
 */
inline std::vector<std::complex<double>> polynomial_roots(std::span<const double> coeffs,
                                                          double relative_zero = 1e-14)
{
    double scale = 0.0;
    for (double c : coeffs) scale = std::max(scale, std::abs(c));
    if (scale == 0.0) return {};
    std::size_t degree = coeffs.size();
    while (degree > 0 && std::abs(coeffs[degree - 1]) <= relative_zero * scale) --degree;
    if (degree <= 1) return {};
    --degree; // now the polynomial degree
    const double lead = coeffs[degree];
    if (degree == 1) return {std::complex<double>(-coeffs[0] / lead, 0.0)};

    const auto d = static_cast<Eigen::Index>(degree);
    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(d, d);
    companion.diagonal(-1).setOnes();
    for (Eigen::Index i = 0; i < d; ++i) companion(i, d - 1) = -coeffs[static_cast<std::size_t>(i)] / lead;
    detail::balance(companion);

    Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, /*computeEigenvectors=*/false);
    if (solver.info() != Eigen::Success)
        throw NumericalError("companion matrix eigenvalue solve did not converge");
    std::vector<std::complex<double>> roots(static_cast<std::size_t>(d));
    for (Eigen::Index i = 0; i < d; ++i) roots[static_cast<std::size_t>(i)] = solver.eigenvalues()[i];
    return roots;
}

/*
 * Real roots in [0, 1]. A root counts as real when |Im| <= imag_tol *
 * max(1, |Re|); real parts within imag_tol outside the interval are clamped.
 * Each root is polished with a few Newton steps on the original polynomial.
 */
inline std::vector<double> real_roots_in_unit_interval(std::span<const double> coeffs,
                                                       double imag_tol = 1e-9)
{
    std::vector<double> out;
    const auto eval = [&](double z, double& deriv) {
        double v = 0.0;
        deriv = 0.0;
        for (std::size_t j = coeffs.size(); j-- > 0;) {
            deriv = deriv * z + v;
            v = v * z + coeffs[j];
        }
        return v;
    };
    for (const auto& r : polynomial_roots(coeffs)) {
        const double re = r.real();
        if (std::abs(r.imag()) > imag_tol * std::max(1.0, std::abs(re))) continue;
        if (re < -imag_tol || re > 1.0 + imag_tol) continue;
        double z = re;
        for (int it = 0; it < 3; ++it) {
            double dv = 0.0;
            const double v = eval(z, dv);
            if (dv == 0.0 || !std::isfinite(v)) break;
            const double next = z - v / dv;
            if (!std::isfinite(next) || std::abs(next - z) > 1e-6) break;
            z = next;
        }
        out.push_back(std::clamp(z, 0.0, 1.0));
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace rach
