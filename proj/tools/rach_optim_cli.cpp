#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "scenario.hpp"

namespace {

using namespace rach;
using namespace rach::cli;

constexpr const char* kVersion = "0.1.0";

enum Exit { ok = 0, validation = 2, capacity = 3, numerical = 4 };

struct Options {
    std::string scenario;
    std::string out;
    std::string policy;
    std::string algorithm;
    std::optional<std::uint64_t> seed;
    std::optional<int> restarts;
    std::uint64_t slots = 100000;
};

std::string metadata(const std::string& command, const Scenario& s, const std::string& algorithm)
{
    std::ostringstream o;
    o << "rach-optim " << kVersion << " command=" << command << " algorithm=" << algorithm
      << " case=" << to_string(s.problem_case) << " K=" << s.devices << " N=" << s.preambles
      << " seed=" << s.bcd.seed << " restarts=" << s.bcd.restarts;
    if (s.delta_bar) o << " delta_bar=" << format_double(*s.delta_bar);
    return o.str();
}

Scenario load(const Options& opt)
{
    Scenario s = load_scenario(opt.scenario);
    if (opt.seed) s.set_seed(*opt.seed);
    if (opt.restarts) s.set_restarts(*opt.restarts);
    if (!opt.algorithm.empty()) {
        const auto& names = algorithm_names();
        if (std::find(names.begin(), names.end(), opt.algorithm) == names.end())
            throw ValidationError("unknown algorithm '" + opt.algorithm + "'");
        s.algorithm = opt.algorithm;
    }
    return s;
}

std::string out_prefix(const Options& opt, const Scenario& s)
{
    if (!opt.out.empty()) return opt.out;
    return s.output.empty() ? std::string() : s.resolve(s.output).string();
}

// Writes to `path`, or stdout when empty.
template <class Fn>
void emit(const std::string& path, Fn&& fn)
{
    if (path.empty()) {
        fn(std::cout);
        return;
    }
    auto f = open_output(path);
    fn(f);
}

SelectionPolicy load_policy(const Options& opt)
{
    if (opt.policy.empty()) throw ValidationError("--policy is required");
    auto f = open_input(opt.policy);
    return read_policy_csv(f, opt.policy);
}

void cmd_optimize(const Options& opt)
{
    const Scenario s = load(opt);
    const Instance in = build_instance(s);
    const auto report = run_algorithm(s.algorithm, s, in);
    const auto meta = metadata("optimize", s, s.algorithm);
    const auto prefix = out_prefix(opt, s);
    if (prefix.empty()) {
        write_policy_csv(std::cout, report.policy, meta);
        return;
    }
    emit(prefix + ".policy.csv", [&](std::ostream& o) { write_policy_csv(o, report.policy, meta); });
    emit(prefix + ".report.csv", [&](std::ostream& o) { write_report_csv(o, report, meta); });
}

void cmd_evaluate(const Options& opt)
{
    const Scenario s = load(opt);
    const Instance in = build_instance(s);
    const auto policy = load_policy(opt);
    require(policy.preambles() == s.preambles, "policy has N = " + std::to_string(policy.preambles()) +
                                                   ", scenario has N = " + std::to_string(s.preambles));
    const auto metrics = evaluate_metrics(policy, in);
    emit(opt.out, [&](std::ostream& o) { write_metrics_csv(o, metrics, metadata("evaluate", s, "none")); });
}

void cmd_simulate(const Options& opt)
{
    const Scenario s = load(opt);
    const Instance in = build_instance(s);
    const auto policy = load_policy(opt);
    require(policy.devices() == s.devices && policy.preambles() == s.preambles, "policy shape does not match K, N");
    require(opt.slots >= 1, "--slots must be at least 1");
    const std::uint64_t seed = s.bcd.seed;
    SimResult r;
    if (in.dist)
        r = simulate(policy, *in.dist, opt.slots, seed);
    else if (in.group)
        r = simulate(policy, *in.group, opt.slots, seed);
    else if (in.samples)
        r = simulate(policy, *in.samples, opt.slots, seed);
    else
        throw ValidationError("scenario has no activity source");
    emit(opt.out, [&](std::ostream& o) { write_sim_csv(o, r, metadata("simulate", s, "none")); });
}

void cmd_sweep(const Options& opt)
{
    const Scenario s = load(opt);
    const auto rows = run_sweep(s);
    const auto path = opt.out.empty() && !s.output.empty() ? s.resolve(s.output).string() : opt.out;
    emit(path, [&](std::ostream& o) {
        write_sweep_csv(o, rows, metadata("sweep", s, s.algorithm) + " parameter=" + s.sweep->parameter);
    });
}

void cmd_oracle(const Options& opt)
{
    const Scenario s = load(opt);
    const Instance in = build_instance(s);
    const auto result = exhaustive_oracle(in.known_dist(), s.preambles);
    const auto meta = metadata("oracle", s, "exhaustive");
    const auto prefix = out_prefix(opt, s);
    if (prefix.empty()) {
        write_policy_csv(std::cout, result.policy, meta);
        return;
    }
    emit(prefix + ".policy.csv", [&](std::ostream& o) { write_policy_csv(o, result.policy, meta); });
    emit(prefix + ".metrics.csv", [&](std::ostream& o) {
        write_metrics_csv(o, {{"objective", result.objective}, {"evaluated", static_cast<double>(result.evaluated)}},
                          meta);
    });
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Preamble selection and access barring optimizer"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    Options opt;
    const auto common = [&](CLI::App* sub) {
        sub->add_option("--scenario", opt.scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", opt.out, "Output path (prefix for optimize and oracle)");
        sub->add_option("--seed", opt.seed, "Seed for every random choice");
    };

    auto* optimize = app.add_subcommand("optimize", "Optimize a policy for the scenario");
    common(optimize);
    optimize->add_option("--restarts", opt.restarts, "Number of random restarts")->check(CLI::PositiveNumber);
    optimize->add_option("--algorithm", opt.algorithm, "Override the scenario algorithm");

    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a policy under the scenario");
    common(evaluate);
    evaluate->add_option("--policy", opt.policy, "Policy CSV")->required();

    auto* sim = app.add_subcommand("simulate", "Monte Carlo simulation of a policy");
    common(sim);
    sim->add_option("--policy", opt.policy, "Policy CSV")->required();
    sim->add_option("--slots", opt.slots, "Number of slots")->check(CLI::PositiveNumber);

    auto* sweep = app.add_subcommand("sweep", "Run the scenario's sweep grid");
    common(sweep);
    sweep->add_option("--restarts", opt.restarts, "Number of random restarts")->check(CLI::PositiveNumber);

    auto* oracle = app.add_subcommand("oracle", "Exhaustive search over deterministic selections");
    common(oracle);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? Exit::ok : Exit::validation;
    }

    try {
        if (*optimize) cmd_optimize(opt);
        else if (*evaluate) cmd_evaluate(opt);
        else if (*sim) cmd_simulate(opt);
        else if (*sweep) cmd_sweep(opt);
        else if (*oracle) cmd_oracle(opt);
    } catch (const CapacityError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return Exit::capacity;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return Exit::numerical;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return Exit::validation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return Exit::validation;
    }
    return Exit::ok;
}
