#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "numeric.hpp"
#include "rng.hpp"

namespace rach {

// Largest device count for which dense 2^K tables are materialized (8 MB of
// doubles at K = 20).
inline constexpr int kMaxExactDevices = 20;

inline std::size_t pattern_count(int devices) { return std::size_t{1} << devices; }

inline void require_dense_capacity(int devices, int cap = kMaxExactDevices)
{
    if (devices > cap)
        throw CapacityError("K = " + std::to_string(devices) + " exceeds the dense cap of " +
                            std::to_string(cap) +
                            "; use the generative group model or a sample set instead");
}

// alpha[S] = sum over m that contain S of probs[m]  (superset zeta transform,
// K * 2^K additions).
inline std::vector<double> subset_probabilities(std::span<const double> probs, int devices)
{
    std::vector<double> alpha(probs.begin(), probs.end());
    const std::size_t size = pattern_count(devices);
    for (int bit = 0; bit < devices; ++bit) {
        const Mask b = Mask{1} << bit;
        for (Mask s = 0; s < size; ++s)
            if (!(s & b)) alpha[s] += alpha[s | b];
    }
    return alpha;
}

/*
 * Joint law of the K binary activity states.
 *
 * probs[m] is the probability of the pattern whose bit (k-1) is x_k, i.e.
 * device 1 is the least significant bit. The subset table alpha[S] (the
 * probability that every device in S is active) is built once on
 * construction because every exact evaluator needs it.
 */
class JointActivityDistribution {
public:
    static JointActivityDistribution from_probs(int devices, std::vector<double> probs)
    {
        require(devices >= 1, "device count must be at least 1");
        require_dense_capacity(devices);
        require(probs.size() == pattern_count(devices),
                "probability vector must have 2^K = " + std::to_string(pattern_count(devices)) +
                    " entries, got " + std::to_string(probs.size()));
        CompensatedSum total;
        for (std::size_t m = 0; m < probs.size(); ++m) {
            require(std::isfinite(probs[m]) && probs[m] >= -1e-15,
                    "probability of pattern " + std::to_string(m) + " is negative or not finite");
            probs[m] = std::max(probs[m], 0.0);
            total += probs[m];
        }
        const double sum = total.value();
        require(std::abs(sum - 1.0) <= 1e-9,
                "pattern probabilities must sum to 1 (got " + std::to_string(sum) + ")");
        for (auto& p : probs) p /= sum;

        JointActivityDistribution d;
        d.devices_ = devices;
        d.alpha_ = subset_probabilities(probs, devices);
        d.probs_ = std::move(probs);
        return d;
    }

    int devices() const noexcept { return devices_; }
    std::size_t size() const noexcept { return probs_.size(); }
    double prob(Mask m) const { return probs_[m]; }
    double subset_probability(Mask s) const { return alpha_[s]; }
    std::span<const double> probs() const noexcept { return probs_; }
    std::span<const double> alpha() const noexcept { return alpha_; }

    // Probability that no device is active.
    double idle_probability() const noexcept { return probs_[0]; }

private:
    JointActivityDistribution() = default;

    int devices_ = 0;
    std::vector<double> probs_;
    std::vector<double> alpha_;
};

// K devices split into G contiguous groups of K/G devices; a group is active
// with probability p_a, all its devices share that state, and groups are
// independent.
struct GroupActivityModel {
    int devices = 1;
    int groups = 1;
    double active_prob = 0.0;

    void validate() const
    {
        require(devices >= 1, "group model needs at least one device");
        require(groups >= 1 && groups <= devices, "group count must lie in [1, K]");
        require(devices % groups == 0, "K = " + std::to_string(devices) +
                                           " is not divisible by G = " + std::to_string(groups));
        require(active_prob >= 0.0 && active_prob <= 1.0, "p_a must lie in [0, 1]");
    }

    int group_size() const noexcept { return devices / groups; }
    int group_of(int device) const noexcept { return device / group_size(); }

    // Bits of every device in group g.
    Mask group_mask(int g) const noexcept
    {
        const int size = group_size();
        const Mask block = size >= 64 ? ~Mask{0} : ((Mask{1} << size) - 1);
        return block << (g * size);
    }
};

inline JointActivityDistribution from_group_model(const GroupActivityModel& model,
                                                  int dense_cap = kMaxExactDevices)
{
    model.validate();
    require_dense_capacity(model.devices, dense_cap);
    std::vector<double> probs(pattern_count(model.devices), 0.0);
    const double p = model.active_prob;
    for (Mask y = 0; y < pattern_count(model.groups); ++y) {
        Mask x = 0;
        for (int g = 0; g < model.groups; ++g)
            if (y >> g & 1) x |= model.group_mask(g);
        const int on = popcount(y);
        probs[x] = std::pow(p, on) * std::pow(1.0 - p, model.groups - on);
    }
    return JointActivityDistribution::from_probs(model.devices, std::move(probs));
}

/*
 * Three devices: devices 1 and 2 are Bernoulli(p) with correlation
 * coefficient eta, device 3 is an independent Bernoulli(p).
 */
inline JointActivityDistribution from_example1(double p, double eta)
{
    require(p > 0.0 && p <= 0.5, "example-1 marginal p must lie in (0, 1/2]");
    const double eta_min = p / (p - 1.0);
    require(eta >= eta_min - 1e-15 && eta <= 1.0 + 1e-15,
            "correlation eta must lie in [p/(p-1), 1]");
    const double p11 = eta * p + (1.0 - eta) * p * p;
    const double p10 = (1.0 - eta) * (p - p * p);
    const double p00 = 1.0 + (eta - 2.0) * p + (1.0 - eta) * p * p;
    const double pair[4] = {p00, p10, p10, p11}; // index x1 + 2 x2
    std::vector<double> probs(8);
    for (Mask m = 0; m < 8; ++m) {
        const double third = (m & 4) ? p : 1.0 - p;
        probs[m] = std::max(pair[m & 3], 0.0) * third;
    }
    return JointActivityDistribution::from_probs(3, std::move(probs));
}

// ---------------------------------------------------------------------------
// First and second order activity statistics
// ---------------------------------------------------------------------------

inline double marginal(const JointActivityDistribution& d, int k)
{
    require(k >= 0 && k < d.devices(), "device index out of range");
    return d.subset_probability(Mask{1} << k);
}

inline double pairwise(const JointActivityDistribution& d, int k, int l)
{
    require(k >= 0 && k < d.devices() && l >= 0 && l < d.devices(), "device index out of range");
    return d.subset_probability((Mask{1} << k) | (Mask{1} << l));
}

inline double marginal(const GroupActivityModel& m, int k)
{
    m.validate();
    require(k >= 0 && k < m.devices, "device index out of range");
    return m.active_prob;
}

inline double pairwise(const GroupActivityModel& m, int k, int l)
{
    m.validate();
    require(k >= 0 && k < m.devices && l >= 0 && l < m.devices, "device index out of range");
    if (m.group_of(k) == m.group_of(l)) return m.active_prob;
    return m.active_prob * m.active_prob;
}

/*
 * Marginal activity probabilities and the symmetric pairwise table
 * (pair(k, k) = marginal(k)). This is all the low-complexity objective
 * needs, so it is also how large-K models and uncertainty bounds are fed
 * to it.
 */
struct PairStats {
    int devices = 0;
    std::vector<double> marginal;
    std::vector<double> pairwise; // devices x devices, row major

    double pair(int k, int l) const { return pairwise[static_cast<std::size_t>(k) * devices + l]; }
    std::span<const double> pair_row(int k) const
    {
        return {pairwise.data() + static_cast<std::size_t>(k) * devices,
                static_cast<std::size_t>(devices)};
    }
    double expected_active() const
    {
        CompensatedSum s;
        for (double m : marginal) s += m;
        return s.value();
    }

    static PairStats zeros(int devices)
    {
        PairStats s;
        s.devices = devices;
        s.marginal.assign(devices, 0.0);
        s.pairwise.assign(static_cast<std::size_t>(devices) * devices, 0.0);
        return s;
    }
};

// Statistics of an arbitrary nonnegative pattern weight vector.
inline PairStats pair_stats_from_weights(std::span<const double> weights, int devices)
{
    const auto alpha = subset_probabilities(weights, devices);
    auto s = PairStats::zeros(devices);
    for (int k = 0; k < devices; ++k) {
        s.marginal[k] = alpha[Mask{1} << k];
        for (int l = 0; l < devices; ++l)
            s.pairwise[static_cast<std::size_t>(k) * devices + l] =
                alpha[(Mask{1} << k) | (Mask{1} << l)];
    }
    return s;
}

inline PairStats pair_stats(const JointActivityDistribution& d)
{
    auto s = PairStats::zeros(d.devices());
    for (int k = 0; k < d.devices(); ++k) {
        s.marginal[k] = marginal(d, k);
        for (int l = 0; l < d.devices(); ++l)
            s.pairwise[static_cast<std::size_t>(k) * d.devices() + l] = pairwise(d, k, l);
    }
    return s;
}

// Analytic, never touches 2^K entries.
inline PairStats pair_stats(const GroupActivityModel& m)
{
    m.validate();
    auto s = PairStats::zeros(m.devices);
    const double p = m.active_prob;
    for (int k = 0; k < m.devices; ++k) {
        s.marginal[k] = p;
        for (int l = 0; l < m.devices; ++l)
            s.pairwise[static_cast<std::size_t>(k) * m.devices + l] =
                m.group_of(k) == m.group_of(l) ? p : p * p;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Uncertainty sets
// ---------------------------------------------------------------------------

/*
 * Box bounds per pattern intersected with the probability simplex.
 * Nonempty iff sum(lower) <= 1 <= sum(upper).
 */
class UncertaintyModel {
public:
    static UncertaintyModel from_bounds(int devices, std::vector<double> lower,
                                        std::vector<double> upper)
    {
        require(devices >= 1, "device count must be at least 1");
        require_dense_capacity(devices);
        require(lower.size() == pattern_count(devices) && upper.size() == lower.size(),
                "bound vectors must have 2^K entries");
        CompensatedSum lo, hi;
        for (std::size_t m = 0; m < lower.size(); ++m) {
            require(std::isfinite(lower[m]) && std::isfinite(upper[m]), "bounds must be finite");
            require(lower[m] >= 0.0 && lower[m] <= upper[m] && upper[m] <= 1.0,
                    "bounds of pattern " + std::to_string(m) + " violate 0 <= lower <= upper <= 1");
            lo += lower[m];
            hi += upper[m];
        }
        if (lo.value() > 1.0 + 1e-12 || hi.value() < 1.0 - 1e-12)
            throw ValidationError("uncertainty polytope is empty (sum lower = " +
                                  std::to_string(lo.value()) +
                                  ", sum upper = " + std::to_string(hi.value()) + ")");
        UncertaintyModel u;
        u.devices_ = devices;
        u.lower_ = std::move(lower);
        u.upper_ = std::move(upper);
        u.lower_sum_ = lo.value();
        u.upper_sum_ = hi.value();
        return u;
    }

    static UncertaintyModel singleton(const JointActivityDistribution& d)
    {
        std::vector<double> p(d.probs().begin(), d.probs().end());
        return from_bounds(d.devices(), p, p);
    }

    int devices() const noexcept { return devices_; }
    std::size_t size() const noexcept { return lower_.size(); }
    std::span<const double> lower() const noexcept { return lower_; }
    std::span<const double> upper() const noexcept { return upper_; }
    double lower_sum() const noexcept { return lower_sum_; }
    double upper_sum() const noexcept { return upper_sum_; }

    // Lower marginals with upper pairwise probabilities: the inputs of the
    // approximate worst-case objective.
    PairStats robust_pair_stats() const
    {
        const auto lo = pair_stats_from_weights(lower_, devices_);
        const auto hi = pair_stats_from_weights(upper_, devices_);
        PairStats s = hi;
        s.marginal = lo.marginal;
        return s;
    }

private:
    UncertaintyModel() = default;

    int devices_ = 0;
    std::vector<double> lower_;
    std::vector<double> upper_;
    double lower_sum_ = 0.0;
    double upper_sum_ = 0.0;
};

inline UncertaintyModel uncertainty_from_relative_error(const JointActivityDistribution& estimate,
                                                        double delta_bar)
{
    require(delta_bar >= 0.0 && delta_bar < 1.0, "delta_bar must lie in [0, 1)");
    std::vector<double> lower(estimate.size()), upper(estimate.size());
    for (std::size_t m = 0; m < estimate.size(); ++m) {
        const double p = estimate.prob(m);
        const double delta = delta_bar * p;
        lower[m] = std::max(p - delta, 0.0);
        upper[m] = std::min(p + delta, 1.0);
    }
    return UncertaintyModel::from_bounds(estimate.devices(), std::move(lower), std::move(upper));
}

/*
 * Relative error rule for a group-model estimate. For K >= min_devices only
 * patterns with at most max_active_groups active groups carry an error bound;
 * below that every pattern gets delta = delta_bar * p_hat.
 */
struct TruncationRule {
    int max_active_groups = 3;
    int min_devices = 101;

    bool applies(int devices) const noexcept { return devices >= min_devices; }
};

inline UncertaintyModel uncertainty_from_group_model(const GroupActivityModel& model,
                                                     double delta_bar,
                                                     const TruncationRule& rule = {})
{
    require(delta_bar >= 0.0 && delta_bar < 1.0, "delta_bar must lie in [0, 1)");
    const auto estimate = from_group_model(model);
    std::vector<double> lower(estimate.size()), upper(estimate.size());
    const bool truncate = rule.applies(model.devices);
    for (Mask m = 0; m < estimate.size(); ++m) {
        const double p = estimate.prob(m);
        double delta = delta_bar * p;
        if (truncate && p > 0.0) {
            int active_groups = 0;
            for (int g = 0; g < model.groups; ++g)
                if (m & model.group_mask(g)) ++active_groups;
            if (active_groups > rule.max_active_groups) delta = 0.0;
        }
        lower[m] = std::max(p - delta, 0.0);
        upper[m] = std::min(p + delta, 1.0);
    }
    return UncertaintyModel::from_bounds(model.devices, std::move(lower), std::move(upper));
}

namespace detail {

// P(Binomial(n, p) <= k).
inline double binomial_cdf(int n, double p, int k)
{
    if (k < 0) return 0.0;
    if (k >= n) return 1.0;
    CompensatedSum s;
    double log_coef = 0.0; // log C(n, j)
    for (int j = 0; j <= k; ++j) {
        if (j > 0) log_coef += std::log(static_cast<double>(n - j + 1)) - std::log(static_cast<double>(j));
        double term;
        if (p == 0.0)
            term = j == 0 ? 1.0 : 0.0;
        else if (p == 1.0)
            term = j == n ? 1.0 : 0.0;
        else
            term = std::exp(log_coef + j * std::log(p) + (n - j) * std::log1p(-p));
        s += term;
    }
    return std::min(s.value(), 1.0);
}

} // namespace detail

/*
 * Lower marginals and upper pairwise probabilities of the relative-error
 * polytope around a group model, computed in closed form (any K).
 * Matches UncertaintyModel::robust_pair_stats() of the dense construction.
 */
inline PairStats robust_pair_stats(const GroupActivityModel& model, double delta_bar,
                                   const TruncationRule& rule = {})
{
    model.validate();
    require(delta_bar >= 0.0 && delta_bar < 1.0, "delta_bar must lie in [0, 1)");
    const double p = model.active_prob;
    const int G = model.groups;
    const bool truncate = rule.applies(model.devices);
    const int T = rule.max_active_groups;

    // Probability mass, among patterns where the given groups are on, of the
    // patterns that carry an error bound.
    const double bounded_one = truncate ? p * detail::binomial_cdf(G - 1, p, T - 1) : p;
    const double bounded_two = truncate ? p * p * detail::binomial_cdf(G - 2, p, T - 2) : p * p;

    // Upper bounds clip at 1 only for a pattern with p_hat > 1/(1 + delta_bar)
    // > 1/2. Only the all-on pattern can be such a pattern and also count
    // towards marginal/pairwise sums.
    const double all_on = std::pow(p, G);
    const bool all_on_bounded = !truncate || G <= T;
    const double excess = all_on_bounded ? std::max(0.0, (1.0 + delta_bar) * all_on - 1.0) : 0.0;

    auto s = PairStats::zeros(model.devices);
    for (int k = 0; k < model.devices; ++k) {
        s.marginal[k] = p - delta_bar * bounded_one;
        for (int l = 0; l < model.devices; ++l) {
            const bool same = model.group_of(k) == model.group_of(l);
            const double base = same ? p : p * p;
            const double bounded = same ? bounded_one : bounded_two;
            s.pairwise[static_cast<std::size_t>(k) * model.devices + l] =
                base + delta_bar * bounded - excess;
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Activity samples
// ---------------------------------------------------------------------------

/*
 * I activity vectors packed as bitsets, split into M contiguous mini-batches
 * of I/M samples each.
 */
class SampleSet {
public:
    SampleSet(int devices, std::size_t count, std::size_t batches)
        : devices_(devices), count_(count), batches_(batches),
          words_((static_cast<std::size_t>(devices) + 63) / 64),
          bits_(count * words_, 0)
    {
        require(devices >= 1, "device count must be at least 1");
        require(count >= 1, "sample count must be at least 1");
        require(batches >= 1 && count % batches == 0,
                "I = " + std::to_string(count) + " is not divisible by M = " +
                    std::to_string(batches));
    }

    static SampleSet from_masks(int devices, std::span<const Mask> masks, std::size_t batches)
    {
        require(devices <= 64, "mask construction supports K <= 64");
        SampleSet s(devices, masks.size(), batches);
        const Mask valid = devices == 64 ? ~Mask{0} : ((Mask{1} << devices) - 1);
        for (std::size_t i = 0; i < masks.size(); ++i) {
            require((masks[i] & ~valid) == 0,
                    "sample " + std::to_string(i) + " has bits beyond device K");
            s.bits_[i * s.words_] = masks[i];
        }
        return s;
    }

    int devices() const noexcept { return devices_; }
    std::size_t size() const noexcept { return count_; }
    std::size_t batches() const noexcept { return batches_; }
    std::size_t batch_size() const noexcept { return count_ / batches_; }
    std::size_t words_per_sample() const noexcept { return words_; }

    std::pair<std::size_t, std::size_t> batch_range(std::size_t m) const
    {
        return {m * batch_size(), (m + 1) * batch_size()};
    }

    bool active(std::size_t i, int k) const
    {
        return bits_[i * words_ + static_cast<std::size_t>(k) / 64] >> (k % 64) & 1;
    }

    void set_active(std::size_t i, int k)
    {
        bits_[i * words_ + static_cast<std::size_t>(k) / 64] |= Mask{1} << (k % 64);
    }

    // Pattern index of sample i; only meaningful for K <= 64.
    Mask mask(std::size_t i) const { return bits_[i * words_]; }

    std::span<const std::uint64_t> words(std::size_t i) const
    {
        return {bits_.data() + i * words_, words_};
    }
    std::span<std::uint64_t> words(std::size_t i) { return {bits_.data() + i * words_, words_}; }

    // Indices of the active devices of sample i, ascending.
    void active_devices(std::size_t i, std::vector<int>& out) const
    {
        out.clear();
        for (std::size_t w = 0; w < words_; ++w) {
            Mask word = bits_[i * words_ + w];
            while (word) {
                out.push_back(static_cast<int>(w * 64) + lowest_bit(word));
                word &= word - 1;
            }
        }
    }

private:
    int devices_;
    std::size_t count_;
    std::size_t batches_;
    std::size_t words_;
    std::vector<std::uint64_t> bits_;
};

inline SampleSet sample(const JointActivityDistribution& d, std::size_t count,
                        std::size_t batches, std::uint64_t seed)
{
    SampleSet out(d.devices(), count, batches);
    std::vector<double> cdf(d.size());
    CompensatedSum acc;
    for (std::size_t m = 0; m < d.size(); ++m) {
        acc += d.prob(m);
        cdf[m] = acc.value();
    }
    CounterRng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        const double u = rng.uniform() * cdf.back();
        auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        auto m = static_cast<Mask>(std::min<std::ptrdiff_t>(it - cdf.begin(),
                                                            static_cast<std::ptrdiff_t>(d.size()) - 1));
        out.words(i)[0] = m;
    }
    return out;
}

inline SampleSet sample(const GroupActivityModel& model, std::size_t count, std::size_t batches,
                        std::uint64_t seed)
{
    model.validate();
    SampleSet out(model.devices, count, batches);
    CounterRng rng(seed);
    const int size = model.group_size();
    for (std::size_t i = 0; i < count; ++i) {
        for (int g = 0; g < model.groups; ++g) {
            if (!rng.bernoulli(model.active_prob)) continue;
            for (int k = g * size; k < (g + 1) * size; ++k) out.set_active(i, k);
        }
    }
    return out;
}

inline JointActivityDistribution empirical_distribution(const SampleSet& samples)
{
    require_dense_capacity(samples.devices());
    std::vector<double> counts(pattern_count(samples.devices()), 0.0);
    for (std::size_t i = 0; i < samples.size(); ++i) counts[samples.mask(i)] += 1.0;
    for (auto& c : counts) c /= static_cast<double>(samples.size());
    return JointActivityDistribution::from_probs(samples.devices(), std::move(counts));
}

// Empirical marginals and pairwise frequencies; works for any K.
inline PairStats empirical_pair_stats(const SampleSet& samples)
{
    const int K = samples.devices();
    auto s = PairStats::zeros(K);
    std::vector<int> act;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        samples.active_devices(i, act);
        for (int k : act) {
            s.marginal[k] += 1.0;
            for (int l : act) s.pairwise[static_cast<std::size_t>(k) * K + l] += 1.0;
        }
    }
    const double inv = 1.0 / static_cast<double>(samples.size());
    for (auto& v : s.marginal) v *= inv;
    for (auto& v : s.pairwise) v *= inv;
    return s;
}

} // namespace rach
