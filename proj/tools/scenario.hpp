#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include <rach_optim/rach_optim.hpp>

namespace rach::cli {

using nlohmann::json;

// Typed access to one JSON object with path-qualified errors. Every key must
// be consumed; leftovers are reported as unknown.
class Fields {
public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object()) fail(path_, "expected an object");
    }

    [[noreturn]] static void fail(const std::string& path, const std::string& why)
    {
        throw ValidationError("scenario: " + path + ": " + why);
    }

    std::string at(const std::string& key) const { return path_ + "." + key; }
    bool has(const std::string& key) const { return j_.contains(key); }

    const json* raw(const std::string& key)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::optional<double> number(const std::string& key)
    {
        const json* v = raw(key);
        if (!v) return std::nullopt;
        if (!v->is_number()) fail(at(key), "expected a number");
        const double d = v->get<double>();
        if (!std::isfinite(d)) fail(at(key), "expected a finite number");
        return d;
    }

    double number(const std::string& key, double fallback) { return number(key).value_or(fallback); }

    double required_number(const std::string& key)
    {
        auto v = number(key);
        if (!v) fail(at(key), "required field is missing");
        return *v;
    }

    std::optional<std::int64_t> integer(const std::string& key)
    {
        const json* v = raw(key);
        if (!v) return std::nullopt;
        if (!v->is_number_integer()) fail(at(key), "expected an integer");
        return v->get<std::int64_t>();
    }

    std::int64_t integer(const std::string& key, std::int64_t lo, std::int64_t hi, std::int64_t fallback)
    {
        const auto v = integer(key).value_or(fallback);
        if (v < lo || v > hi)
            fail(at(key), "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
        return v;
    }

    std::optional<std::string> text(const std::string& key)
    {
        const json* v = raw(key);
        if (!v) return std::nullopt;
        if (!v->is_string()) fail(at(key), "expected a string");
        return v->get<std::string>();
    }

    std::optional<bool> boolean(const std::string& key)
    {
        const json* v = raw(key);
        if (!v) return std::nullopt;
        if (!v->is_boolean()) fail(at(key), "expected true or false");
        return v->get<bool>();
    }

    std::optional<Fields> object(const std::string& key)
    {
        const json* v = raw(key);
        if (!v) return std::nullopt;
        return Fields(*v, at(key));
    }

    void finish() const
    {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) fail(at(it.key()), "unknown field");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

enum class Case { perfect, imperfect, unknown };

inline const char* to_string(Case c)
{
    switch (c) {
    case Case::perfect: return "pp";
    case Case::imperfect: return "ip";
    case Case::unknown: return "up";
    }
    return "?";
}

inline const std::vector<std::string>& algorithm_names()
{
    static const std::vector<std::string> names{"bcd-exact",      "bcd-lowcomp",   "robust-sca",
                                                "robust-lowcomp", "stochastic",    "baseline:lte",
                                                "baseline:fixed", "baseline:mmpc", "baseline:mspc"};
    return names;
}

inline const std::vector<std::string>& metric_names()
{
    static const std::vector<std::string> names{"average", "worst_case", "approx", "approx_worst_case",
                                                "sample_average"};
    return names;
}

struct SweepSpec {
    std::string parameter;
    std::vector<double> values;
    std::vector<std::string> schemes;
    std::vector<std::string> metrics;
};

struct Scenario {
    int devices = 0;
    int preambles = 0;
    std::string activity_kind;
    GroupActivityModel group;
    double p = 0.0;
    double eta = 0.0;
    std::vector<double> probs;
    std::string dense_file;

    Case problem_case = Case::perfect;
    std::string algorithm = "bcd-exact";

    std::optional<double> delta_bar;
    TruncationRule truncation;

    std::size_t sample_count = 100000;
    std::size_t sample_batches = 100;
    std::uint64_t sample_seed = 1;
    std::string sample_file;

    BcdConfig bcd;
    ScaConfig sca;
    StochasticConfig stochastic;
    bool warm_start = true;

    std::string fixed_policy;
    std::string output;
    std::optional<SweepSpec> sweep;

    std::filesystem::path base_dir;

    std::filesystem::path resolve(const std::string& file) const
    {
        std::filesystem::path p(file);
        return p.is_absolute() ? p : base_dir / p;
    }

    void set_seed(std::uint64_t seed)
    {
        bcd.seed = seed;
        sca.seed = seed;
        stochastic.seed = seed;
    }

    void set_restarts(int restarts)
    {
        require(restarts >= 1, "--restarts must be at least 1");
        bcd.restarts = restarts;
        sca.restarts = restarts;
        stochastic.restarts = restarts;
    }
};

namespace detail {

inline void parse_activity(Scenario& s, Fields a)
{
    const auto kind = a.text("kind");
    if (!kind) Fields::fail(a.at("kind"), "required field is missing");
    s.activity_kind = *kind;
    if (*kind == "group") {
        s.group.devices = s.devices;
        s.group.groups = static_cast<int>(a.integer("groups", 1, s.devices, 1));
        s.group.active_prob = a.required_number("active_prob");
        if (s.group.active_prob < 0.0 || s.group.active_prob > 1.0) Fields::fail(a.at("active_prob"), "must lie in [0, 1]");
        if (s.devices % s.group.groups != 0)
            Fields::fail(a.at("groups"), "K = " + std::to_string(s.devices) + " is not divisible by G");
    } else if (*kind == "example1") {
        if (s.devices != 3) Fields::fail("$.devices", "the example1 activity model has K = 3");
        s.p = a.required_number("p");
        s.eta = a.required_number("eta");
    } else if (*kind == "dense") {
        const json* probs = a.raw("probs");
        const auto file = a.text("file");
        if (!probs == !file) Fields::fail(a.at("probs"), "give exactly one of 'probs' and 'file'");
        if (probs) {
            if (!probs->is_array()) Fields::fail(a.at("probs"), "expected an array of numbers");
            for (std::size_t i = 0; i < probs->size(); ++i) {
                if (!(*probs)[i].is_number()) Fields::fail(a.at("probs") + "[" + std::to_string(i) + "]", "expected a number");
                s.probs.push_back((*probs)[i].get<double>());
            }
        } else {
            s.dense_file = *file;
        }
    } else if (*kind == "samples") {
        // Activity only through the sample file.
    } else {
        Fields::fail(a.at("kind"), "unknown activity kind '" + *kind + "' (group, example1, dense, samples)");
    }
    a.finish();
}

inline void parse_config(Scenario& s, Fields c)
{
    if (auto seed = c.integer("seed")) {
        if (*seed < 0) Fields::fail(c.at("seed"), "must be nonnegative");
        s.set_seed(static_cast<std::uint64_t>(*seed));
    }
    if (c.has("restarts")) {
        s.set_restarts(static_cast<int>(c.integer("restarts", 1, 10000, 1)));
    }
    if (c.has("max_iterations")) {
        const int it = static_cast<int>(c.integer("max_iterations", 1, 100000000, 1));
        s.bcd.max_outer_iterations = it;
        s.sca.max_iterations = it;
        s.stochastic.max_iterations = it;
    }
    s.sca.gamma = c.number("gamma", s.sca.gamma);
    if (auto mu = c.number("mu")) s.sca.mu = s.stochastic.mu = *mu;
    s.stochastic.tau = c.number("tau", s.stochastic.tau);
    s.stochastic.trajectory_stride =
        static_cast<int>(c.integer("trajectory_stride", 1, 100000000, s.stochastic.trajectory_stride));
    s.sca.max_devices = static_cast<int>(c.integer("max_devices", 1, kMaxExactDevices, s.sca.max_devices));
    if (auto w = c.boolean("warm_start")) s.warm_start = *w;
    c.finish();
    try {
        s.bcd.validate();
        s.sca.validate();
        s.stochastic.validate();
    } catch (const ValidationError& e) {
        Fields::fail("$.config", e.what());
    }
}

inline SweepSpec parse_sweep(const Scenario& s, Fields w)
{
    static const std::vector<std::string> parameters{"eta", "p", "devices", "preambles", "active_prob", "groups",
                                                     "delta_bar"};
    SweepSpec out;
    const auto param = w.text("parameter");
    if (!param) Fields::fail(w.at("parameter"), "required field is missing");
    if (std::find(parameters.begin(), parameters.end(), *param) == parameters.end())
        Fields::fail(w.at("parameter"), "unknown sweep parameter '" + *param + "'");
    out.parameter = *param;

    const json* values = w.raw("values");
    if (!values || !values->is_array()) Fields::fail(w.at("values"), "expected an array of numbers");
    if (values->empty()) Fields::fail(w.at("values"), "sweep grid is empty");
    for (std::size_t i = 0; i < values->size(); ++i) {
        if (!(*values)[i].is_number()) Fields::fail(w.at("values") + "[" + std::to_string(i) + "]", "expected a number");
        out.values.push_back((*values)[i].get<double>());
    }

    const auto string_list = [&](const std::string& key, const std::vector<std::string>& allowed) {
        std::vector<std::string> list;
        const json* v = w.raw(key);
        if (!v) return list;
        if (!v->is_array() || v->empty()) Fields::fail(w.at(key), "expected a nonempty array of strings");
        for (std::size_t i = 0; i < v->size(); ++i) {
            const auto& e = (*v)[i];
            const std::string where = w.at(key) + "[" + std::to_string(i) + "]";
            if (!e.is_string()) Fields::fail(where, "expected a string");
            const auto name = e.get<std::string>();
            if (std::find(allowed.begin(), allowed.end(), name) == allowed.end())
                Fields::fail(where, "unknown name '" + name + "'");
            list.push_back(name);
        }
        return list;
    };
    auto schemes = algorithm_names();
    for (const char* sch : {"scheme1", "scheme2", "scheme3", "scheme4"}) schemes.push_back(sch);
    out.schemes = string_list("schemes", schemes);
    if (out.schemes.empty()) out.schemes = {s.algorithm};
    out.metrics = string_list("metrics", metric_names());
    if (out.metrics.empty()) out.metrics = metric_names();
    w.finish();
    return out;
}

} // namespace detail

/*
 * JSON scenario. Top-level fields: devices, preambles, activity, case,
 * algorithm, uncertainty, samples, config, fixed_policy, output, sweep.
 * Relative file names resolve against the scenario's directory.
 */
inline Scenario parse_scenario(const json& root, const std::filesystem::path& base_dir = {})
{
    Scenario s;
    s.base_dir = base_dir;
    Fields top(root, "$");
    if (!top.has("devices")) Fields::fail("$.devices", "required field is missing");
    if (!top.has("preambles")) Fields::fail("$.preambles", "required field is missing");
    s.devices = static_cast<int>(top.integer("devices", 1, 1 << 20, 1));
    s.preambles = static_cast<int>(top.integer("preambles", 1, 1 << 20, 1));

    auto activity = top.object("activity");
    if (!activity) Fields::fail("$.activity", "required field is missing");
    detail::parse_activity(s, *activity);

    const auto c = top.text("case").value_or("pp");
    if (c == "pp") s.problem_case = Case::perfect;
    else if (c == "ip") s.problem_case = Case::imperfect;
    else if (c == "up") s.problem_case = Case::unknown;
    else Fields::fail("$.case", "expected one of pp, ip, up");

    s.algorithm = top.text("algorithm").value_or("bcd-exact");
    const auto& names = algorithm_names();
    if (std::find(names.begin(), names.end(), s.algorithm) == names.end())
        Fields::fail("$.algorithm", "unknown algorithm '" + s.algorithm + "'");

    if (auto u = top.object("uncertainty")) {
        s.delta_bar = u->required_number("delta_bar");
        if (*s.delta_bar < 0.0 || *s.delta_bar >= 1.0) Fields::fail(u->at("delta_bar"), "must lie in [0, 1)");
        if (auto t = u->object("truncation")) {
            s.truncation.max_active_groups = static_cast<int>(t->integer("max_active_groups", 0, 1 << 20, 3));
            s.truncation.min_devices = static_cast<int>(t->integer("min_devices", 1, 1 << 30, 101));
            t->finish();
        }
        u->finish();
    }

    if (auto sm = top.object("samples")) {
        s.sample_count = static_cast<std::size_t>(sm->integer("count", 1, std::int64_t{1} << 40, 100000));
        s.sample_batches = static_cast<std::size_t>(sm->integer("batches", 1, std::int64_t{1} << 40, 100));
        s.sample_seed = static_cast<std::uint64_t>(sm->integer("seed", 0, INT64_MAX, 1));
        s.sample_file = sm->text("file").value_or("");
        if (s.sample_file.empty() && s.sample_count % s.sample_batches != 0)
            Fields::fail(sm->at("batches"), "sample count is not divisible by the batch count");
        sm->finish();
    }

    if (auto cfg = top.object("config")) detail::parse_config(s, *cfg);
    s.fixed_policy = top.text("fixed_policy").value_or("");
    s.output = top.text("output").value_or("");
    if (auto sw = top.object("sweep")) s.sweep = detail::parse_sweep(s, *sw);
    top.finish();

    // Case and algorithm compatibility.
    const bool robust = s.algorithm == "robust-sca" || s.algorithm == "robust-lowcomp";
    if (robust && s.problem_case != Case::imperfect)
        Fields::fail("$.algorithm", s.algorithm + " needs case 'ip'");
    if (s.problem_case == Case::imperfect && !s.delta_bar)
        Fields::fail("$.uncertainty", "case 'ip' needs an uncertainty block with delta_bar");
    if (s.algorithm == "stochastic" && s.problem_case != Case::unknown)
        Fields::fail("$.algorithm", "stochastic needs case 'up'");
    if (s.activity_kind == "samples" && s.problem_case != Case::unknown)
        Fields::fail("$.activity.kind", "sample-only activity needs case 'up'");
    if (s.activity_kind == "samples" && s.sample_file.empty())
        Fields::fail("$.samples.file", "sample-only activity needs a sample file");
    if (s.algorithm == "baseline:fixed" && s.fixed_policy.empty())
        Fields::fail("$.fixed_policy", "baseline:fixed needs a policy file");
    return s;
}

inline Scenario load_scenario(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open scenario '" + path + "'");
    json root;
    try {
        root = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError("scenario: " + path + ": " + e.what());
    }
    return parse_scenario(root, std::filesystem::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Materialized inputs
// ---------------------------------------------------------------------------

struct Instance {
    int devices = 0;
    int preambles = 0;
    Case problem_case = Case::perfect;
    std::optional<GroupActivityModel> group;
    // Model distribution (p, or the estimate in the imperfect case).
    std::optional<JointActivityDistribution> dist;
    std::optional<PairStats> stats;
    std::optional<UncertaintyModel> uncertainty;
    std::optional<PairStats> robust_stats;
    std::optional<SampleSet> samples;
    // What the optimizer sees in the unknown case.
    std::optional<JointActivityDistribution> empirical;
    std::optional<PairStats> empirical_stats;

    const JointActivityDistribution& known_dist() const
    {
        const auto& d = problem_case == Case::unknown ? empirical : dist;
        if (!d)
            throw CapacityError("K = " + std::to_string(devices) + " exceeds the dense limit of " +
                                std::to_string(kMaxExactDevices) + " devices; use a low-complexity algorithm");
        return *d;
    }

    const PairStats& known_stats() const
    {
        const auto& s = problem_case == Case::unknown ? empirical_stats : stats;
        if (!s) throw ValidationError("marginal and pairwise statistics are unavailable");
        return *s;
    }
};

inline Instance build_instance(const Scenario& s)
{
    Instance in;
    in.devices = s.devices;
    in.preambles = s.preambles;
    in.problem_case = s.problem_case;
    const bool dense_ok = s.devices <= kMaxExactDevices;

    if (s.activity_kind == "group") {
        in.group = s.group;
        in.group->validate();
        in.stats = pair_stats(*in.group);
        if (dense_ok) in.dist = from_group_model(*in.group);
    } else if (s.activity_kind == "example1") {
        in.dist = from_example1(s.p, s.eta);
    } else if (s.activity_kind == "dense") {
        if (!s.probs.empty()) {
            in.dist = JointActivityDistribution::from_probs(s.devices, s.probs);
        } else {
            auto f = open_input(s.resolve(s.dense_file).string());
            in.dist = read_distribution_csv(f, s.devices, s.dense_file);
        }
    }
    if (in.dist && !in.stats) in.stats = pair_stats(*in.dist);

    if (s.problem_case == Case::imperfect) {
        if (!in.stats) throw ValidationError("case 'ip' needs an activity estimate");
        if (in.dist) {
            in.uncertainty = in.group ? uncertainty_from_group_model(*in.group, *s.delta_bar, s.truncation)
                                      : uncertainty_from_relative_error(*in.dist, *s.delta_bar);
            in.robust_stats = in.uncertainty->robust_pair_stats();
        } else {
            in.robust_stats = robust_pair_stats(*in.group, *s.delta_bar, s.truncation);
        }
    }

    if (s.problem_case == Case::unknown) {
        if (!s.sample_file.empty()) {
            const auto path = s.resolve(s.sample_file);
            std::ifstream probe(path, std::ios::binary);
            char magic[8] = {};
            probe.read(magic, 8);
            if (probe.gcount() == 8 && std::string(magic, 8) == "RACHSMP1") {
                auto f = open_input(path.string(), std::ios::binary);
                in.samples = read_samples_binary(f, s.sample_file);
            } else {
                auto f = open_input(path.string());
                in.samples = read_samples_csv(f, s.devices, s.sample_batches, s.sample_file);
            }
            if (in.samples->devices() != s.devices)
                throw ValidationError(s.sample_file + ": samples have K = " + std::to_string(in.samples->devices()) +
                                      ", scenario has K = " + std::to_string(s.devices));
        } else if (in.group) {
            in.samples = sample(*in.group, s.sample_count, s.sample_batches, s.sample_seed);
        } else if (in.dist) {
            in.samples = sample(*in.dist, s.sample_count, s.sample_batches, s.sample_seed);
        }
        in.empirical_stats = empirical_pair_stats(*in.samples);
        if (dense_ok) in.empirical = empirical_distribution(*in.samples);
    }
    return in;
}

// ---------------------------------------------------------------------------
// Running algorithms and evaluating policies
// ---------------------------------------------------------------------------

inline Metrics evaluate_metrics(const SelectionPolicy& policy, const Instance& in)
{
    require(policy.devices() == in.devices, "policy has K = " + std::to_string(policy.devices()) +
                                                ", scenario has K = " + std::to_string(in.devices));
    Metrics m;
    const auto opt = [](bool ok, auto fn) { return ok ? std::optional<double>(fn()) : std::nullopt; };
    m.emplace_back("average", opt(in.dist.has_value(), [&] { return average_throughput(policy, *in.dist); }));
    m.emplace_back("worst_case",
                   opt(in.uncertainty.has_value(), [&] { return worst_case_throughput(policy, *in.uncertainty); }));
    m.emplace_back("approx", opt(in.stats.has_value(), [&] { return approx_throughput(policy, *in.stats); }));
    m.emplace_back("approx_worst_case", opt(in.robust_stats.has_value(), [&] {
                       return approx_throughput(policy, *in.robust_stats);
                   }));
    m.emplace_back("sample_average",
                   opt(in.samples.has_value(), [&] { return sample_average_throughput(policy, *in.samples); }));
    return m;
}

// Objective matching the case: average, worst case, or sample average, with
// the approximate forms beyond the dense limit.
inline double case_objective(const SelectionPolicy& policy, const Instance& in)
{
    switch (in.problem_case) {
    case Case::perfect:
        return in.dist ? average_throughput(policy, *in.dist) : approx_throughput(policy, *in.stats);
    case Case::imperfect:
        return in.uncertainty ? worst_case_throughput(policy, *in.uncertainty)
                              : approx_throughput(policy, *in.robust_stats);
    case Case::unknown:
        return sample_average_throughput(policy, *in.samples);
    }
    return 0.0;
}

inline OptimizerReport fixed_report(const std::string& name, SelectionPolicy policy, const Instance& in,
                                    std::uint64_t seed)
{
    OptimizerReport r{.algorithm = name, .policy = std::move(policy)};
    r.objective = case_objective(r.policy, in);
    r.trajectory = {r.objective};
    r.termination = Termination::fixed_point;
    r.seed = seed;
    return r;
}

inline OptimizerReport run_algorithm(const std::string& algorithm, const Scenario& s, const Instance& in)
{
    const int N = in.preambles;
    if (algorithm == "bcd-exact") return run_bcd_exact(in.known_dist(), N, s.bcd);
    if (algorithm == "bcd-lowcomp") return run_bcd_lowcomp(in.known_stats(), N, s.bcd);
    if (algorithm == "robust-sca" || algorithm == "robust-lowcomp") {
        if (in.problem_case != Case::imperfect) throw ValidationError(algorithm + " needs case 'ip'");
        if (algorithm == "robust-lowcomp")
            return in.uncertainty ? run_robust_lowcomp(*in.uncertainty, N, s.bcd)
                                  : run_robust_lowcomp(*in.robust_stats, N, s.bcd);
        if (!in.uncertainty)
            throw CapacityError("robust SCA needs a dense uncertainty model; K = " + std::to_string(in.devices) +
                                " exceeds the dense limit");
        auto config = s.sca;
        if (s.warm_start && in.devices <= config.max_devices)
            config.warm_starts.push_back(run_bcd_exact(*in.dist, N, s.bcd).policy);
        return run_robust_sca(*in.uncertainty, N, config);
    }
    if (algorithm == "stochastic") {
        if (!in.samples) throw ValidationError("stochastic needs case 'up'");
        return run_stochastic(*in.samples, N, s.stochastic);
    }
    if (algorithm == "baseline:lte") {
        const auto& stats = in.problem_case == Case::imperfect ? *in.stats : in.known_stats();
        return fixed_report(algorithm, bl_lte(stats, N), in, s.bcd.seed);
    }
    if (algorithm == "baseline:fixed") {
        auto f = open_input(s.resolve(s.fixed_policy).string());
        auto p = read_policy_csv(f, s.fixed_policy);
        require(p.devices() == in.devices && p.preambles() == N, s.fixed_policy + ": policy shape does not match K, N");
        return fixed_report(algorithm, std::move(p), in, s.bcd.seed);
    }
    if (algorithm == "baseline:mmpc") mmpc_baseline();
    if (algorithm == "baseline:mspc") mspc_baseline();
    if (algorithm.rfind("scheme", 0) == 0 && algorithm.size() == 7) {
        if (s.activity_kind != "example1") throw ValidationError(algorithm + " needs the example1 activity model");
        const int i = algorithm[6] - '1';
        require(i >= 0 && i < 4, "unknown scheme '" + algorithm + "'");
        return fixed_report(algorithm, example1_schemes(s.p, s.eta)[i], in, s.bcd.seed);
    }
    throw ValidationError("unknown algorithm '" + algorithm + "'");
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepRow {
    double x = 0.0;
    std::string scheme;
    std::string metric;
    std::optional<double> value;
};

inline Scenario sweep_point(const Scenario& base, const std::string& parameter, double x)
{
    Scenario s = base;
    const auto as_int = [&](const char* what) {
        if (x != std::floor(x) || x < 1.0) throw ValidationError("sweep: " + std::string(what) + " values must be positive integers");
        return static_cast<int>(x);
    };
    if (parameter == "eta") s.eta = x;
    else if (parameter == "p") s.p = x;
    else if (parameter == "active_prob") s.group.active_prob = x;
    else if (parameter == "delta_bar") s.delta_bar = x;
    else if (parameter == "preambles") s.preambles = as_int("preambles");
    else if (parameter == "groups") s.group.groups = as_int("groups");
    else if (parameter == "devices") s.devices = s.group.devices = as_int("devices");
    if ((parameter == "eta" || parameter == "p") && s.activity_kind != "example1")
        throw ValidationError("sweep: parameter '" + parameter + "' needs the example1 activity model");
    if ((parameter == "active_prob" || parameter == "groups" || parameter == "devices") && s.activity_kind != "group")
        throw ValidationError("sweep: parameter '" + parameter + "' needs the group activity model");
    if (parameter == "delta_bar" && s.problem_case != Case::imperfect)
        throw ValidationError("sweep: parameter 'delta_bar' needs case 'ip'");
    return s;
}

/*
 * Every (x, scheme, metric) of the grid, sorted by x, scheme, metric. Point
 * i runs with seed split(i) of the scenario seed.
 */
inline std::vector<SweepRow> run_sweep(const Scenario& base)
{
    if (!base.sweep) throw ValidationError("scenario has no sweep block");
    const auto& spec = *base.sweep;
    std::vector<std::vector<SweepRow>> parts(spec.values.size());
    const CounterRng root(base.bcd.seed);
    for (std::size_t i = 0; i < spec.values.size(); ++i) {
        const double x = spec.values[i];
        Scenario s = sweep_point(base, spec.parameter, x);
        CounterRng seeder = root.split(i);
        s.set_seed(seeder());
        const auto in = build_instance(s);
        for (const auto& scheme : spec.schemes) {
            const auto report = run_algorithm(scheme, s, in);
            const auto metrics = evaluate_metrics(report.policy, in);
            for (const auto& name : spec.metrics)
                for (const auto& [metric, value] : metrics)
                    if (metric == name) parts[i].push_back({x, scheme, metric, value});
        }
    }
    std::vector<SweepRow> rows;
    for (auto& p : parts) rows.insert(rows.end(), p.begin(), p.end());
    std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
        if (a.x != b.x) return a.x < b.x;
        if (a.scheme != b.scheme) return a.scheme < b.scheme;
        return a.metric < b.metric;
    });
    return rows;
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows, const std::string& comment = "")
{
    if (!comment.empty()) out << "# " << comment << '\n';
    out << "x,scheme,metric,value\n";
    for (const auto& r : rows)
        out << format_double(r.x) << ',' << r.scheme << ',' << r.metric << ','
            << (r.value ? format_double(*r.value) : "unavailable") << '\n';
}

} // namespace rach::cli
