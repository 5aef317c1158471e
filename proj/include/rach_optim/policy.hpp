#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "numeric.hpp"

namespace rach {

/*
 * Read-only view of a K x N selection matrix (row k is device k's
 * distribution over preambles) with a barring factor. The robust optimizer
 * also evaluates scaled matrices B = eps * A through this view with eps = 1,
 * so rows are not required to sum to one here.
 */
struct PolicyView {
    int devices = 0;
    int preambles = 0;
    std::span<const double> a;
    double epsilon = 1.0;

    double operator()(int k, int n) const
    {
        return a[static_cast<std::size_t>(k) * preambles + n];
    }
    std::span<const double> row(int k) const
    {
        return a.subspan(static_cast<std::size_t>(k) * preambles, preambles);
    }
};

// Preamble selection distributions plus the access barring factor.
class SelectionPolicy {
public:
    SelectionPolicy(int devices, int preambles, std::vector<double> a, double epsilon)
        : devices_(devices), preambles_(preambles), a_(std::move(a)), epsilon_(epsilon)
    {
        require(devices >= 1 && preambles >= 1, "policy needs K >= 1 and N >= 1");
        require(a_.size() == static_cast<std::size_t>(devices) * preambles,
                "selection matrix must have K * N entries");
        for (int k = 0; k < devices_; ++k) normalize_row(k);
        set_epsilon(epsilon);
    }

    // a_k = e_{assign[k]}.
    static SelectionPolicy vertex(std::span<const int> assign, int preambles, double epsilon)
    {
        std::vector<double> a(assign.size() * static_cast<std::size_t>(preambles), 0.0);
        for (std::size_t k = 0; k < assign.size(); ++k) {
            require(assign[k] >= 0 && assign[k] < preambles, "preamble index out of range");
            a[k * preambles + assign[k]] = 1.0;
        }
        return SelectionPolicy(static_cast<int>(assign.size()), preambles, std::move(a), epsilon);
    }

    static SelectionPolicy uniform(int devices, int preambles, double epsilon)
    {
        return SelectionPolicy(devices, preambles,
                               std::vector<double>(static_cast<std::size_t>(devices) * preambles,
                                                   1.0 / preambles),
                               epsilon);
    }

    int devices() const noexcept { return devices_; }
    int preambles() const noexcept { return preambles_; }
    double epsilon() const noexcept { return epsilon_; }
    double prob(int k, int n) const { return a_[index(k, n)]; }
    std::span<const double> matrix() const noexcept { return a_; }
    std::span<const double> row(int k) const
    {
        return std::span<const double>(a_).subspan(index(k, 0), preambles_);
    }

    PolicyView view() const noexcept { return {devices_, preambles_, a_, epsilon_}; }
    operator PolicyView() const noexcept { return view(); }

    void set_epsilon(double epsilon)
    {
        require(std::isfinite(epsilon) && epsilon >= 0.0 && epsilon <= 1.0,
                "barring factor must lie in [0, 1]");
        epsilon_ = epsilon;
    }

    void set_vertex(int k, int n)
    {
        require(n >= 0 && n < preambles_, "preamble index out of range");
        for (int j = 0; j < preambles_; ++j) a_[index(k, j)] = j == n ? 1.0 : 0.0;
    }

    void set_row(int k, std::span<const double> row)
    {
        require(static_cast<int>(row.size()) == preambles_, "row must have N entries");
        for (int j = 0; j < preambles_; ++j) a_[index(k, j)] = row[j];
        normalize_row(k);
    }

    // n if a_k = e_n exactly.
    std::optional<int> vertex_index(int k) const
    {
        std::optional<int> hit;
        for (int n = 0; n < preambles_; ++n) {
            const double v = a_[index(k, n)];
            if (v == 1.0 && !hit) hit = n;
            else if (v != 0.0) return std::nullopt;
        }
        return hit;
    }

    bool is_vertex() const
    {
        for (int k = 0; k < devices_; ++k)
            if (!vertex_index(k)) return false;
        return true;
    }

    friend bool operator==(const SelectionPolicy&, const SelectionPolicy&) = default;

private:
    std::size_t index(int k, int n) const
    {
        return static_cast<std::size_t>(k) * preambles_ + n;
    }

    void normalize_row(int k)
    {
        CompensatedSum s;
        for (int n = 0; n < preambles_; ++n) {
            double& v = a_[index(k, n)];
            require(std::isfinite(v) && v >= -1e-15, "selection probabilities must be nonnegative");
            v = std::max(v, 0.0);
            s += v;
        }
        const double total = s.value();
        require(std::abs(total - 1.0) <= 1e-9,
                "selection distribution of device " + std::to_string(k + 1) + " sums to " +
                    std::to_string(total));
        // Rows already normalized up to rounding are left alone, which keeps
        // construction idempotent (file round trips are exact).
        if (std::abs(total - 1.0) > 4.0 * preambles_ * std::numeric_limits<double>::epsilon())
            for (int n = 0; n < preambles_; ++n) a_[index(k, n)] /= total;
    }

    int devices_;
    int preambles_;
    std::vector<double> a_;
    double epsilon_;
};

} // namespace rach
