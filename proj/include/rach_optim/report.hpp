#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "policy.hpp"
#include "rng.hpp"

namespace rach {

enum class Termination { fixed_point, converged, iteration_cap };

inline const char* to_string(Termination t)
{
    switch (t) {
    case Termination::fixed_point: return "fixed_point";
    case Termination::converged: return "converged";
    case Termination::iteration_cap: return "iteration_cap";
    }
    return "unknown";
}

struct OptimizerReport {
    std::string algorithm;
    SelectionPolicy policy;
    double objective = 0.0;
    std::vector<double> trajectory = {}; // one objective value per outer iteration
    int iterations = 0;
    Termination termination = Termination::iteration_cap;
    int best_restart = 0;
    std::vector<double> restart_objectives = {};
    std::uint64_t seed = 0;
    std::size_t tie_events = 0;
    double kkt_residual = std::numeric_limits<double>::quiet_NaN();
};

// Picks the restart with the largest objective; the lowest index wins ties.
inline std::size_t best_run(std::span<const OptimizerReport> runs)
{
    require(!runs.empty(), "no optimizer runs to choose from");
    std::size_t best = 0;
    for (std::size_t r = 1; r < runs.size(); ++r)
        if (runs[r].objective > runs[best].objective) best = r;
    return best;
}

inline OptimizerReport merge_restarts(std::vector<OptimizerReport> runs)
{
    const std::size_t best = best_run(runs);
    OptimizerReport out = std::move(runs[best]);
    out.best_restart = static_cast<int>(best);
    out.restart_objectives.clear();
    for (const auto& r : runs) out.restart_objectives.push_back(r.objective);
    return out;
}

/*
 * Vertex choice shared by the block updates: the candidate set is every
 * index whose score is within tol * max(1, |best|) of the best score. The
 * current vertex is kept when it is in the set; otherwise a member is drawn
 * uniformly. Returns the chosen index and the size of the set.
 */
struct VertexChoice {
    int index = 0;
    int set_size = 0;
    bool changed = false;
};

inline VertexChoice choose_vertex(std::span<const double> score, bool maximize,
                                  std::optional<int> current, CounterRng& rng, double tol)
{
    const auto better = [&](double a, double b) { return maximize ? a > b : a < b; };
    double best = score[0];
    for (double v : score)
        if (better(v, best)) best = v;
    const double slack = tol * std::max(1.0, std::abs(best));
    std::vector<int> set;
    for (int n = 0; n < static_cast<int>(score.size()); ++n) {
        const double gap = maximize ? best - score[n] : score[n] - best;
        if (gap <= slack) set.push_back(n);
    }
    VertexChoice c;
    c.set_size = static_cast<int>(set.size());
    if (current && std::find(set.begin(), set.end(), *current) != set.end()) {
        c.index = *current;
        return c;
    }
    c.index = set.size() == 1 ? set[0] : set[rng.below(set.size())];
    c.changed = true;
    return c;
}

inline std::vector<int> random_assignment(int devices, int preambles, CounterRng& rng)
{
    std::vector<int> assign(devices);
    for (auto& n : assign) n = static_cast<int>(rng.below(static_cast<std::uint64_t>(preambles)));
    return assign;
}

} // namespace rach
