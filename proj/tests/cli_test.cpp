#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include <rach_optim/rach_optim.hpp>

namespace fs = std::filesystem;
using namespace rach;

namespace {

class Cli : public ::testing::Test {
protected:
    void SetUp() override
    {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / ("rach_cli_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    std::string write(const std::string& name, const std::string& text) const
    {
        std::ofstream(path(name)) << text;
        return path(name);
    }

    // Exit status of the CLI; stdout and stderr land in last_output_.
    int run(const std::string& args)
    {
        const std::string log = path("output.txt");
        const std::string cmd = std::string(RACH_OPTIM_CLI) + " " + args + " > " + log + " 2>&1";
        const int status = std::system(cmd.c_str());
        last_output_ = read(log);
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    static std::string read(const std::string& file)
    {
        std::ifstream in(file);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    // metric -> value from a metrics CSV.
    static std::map<std::string, std::string> metrics(const std::string& file)
    {
        std::ifstream in(file);
        std::map<std::string, std::string> out;
        for (const auto& r : csv::read(in, {"metric", "value"}, file)) out[r.fields[0]] = r.fields[1];
        return out;
    }

    static double report_objective(const std::string& file)
    {
        const std::string text = read(file);
        const auto at = text.find(" objective=");
        EXPECT_NE(at, std::string::npos);
        return std::stod(text.substr(at + 11));
    }

    fs::path dir_;
    std::string last_output_;
};

const std::string kExample1 = R"("devices": 3, "preambles": 2, "activity": {"kind": "example1", "p": 0.5, "eta": 1})";

} // namespace

TEST_F(Cli, OptimizeEveryAlgorithm)
{
    const std::string policy = write("fixed.csv", "device,preamble,prob\n1,1,1\n1,2,0\n2,1,0\n2,2,1\n3,1,0.5\n3,2,0.5\nepsilon,,0.9\n");
    const std::vector<std::string> scenarios{
        R"({)" + kExample1 + R"(, "algorithm": "bcd-exact"})",
        R"({)" + kExample1 + R"(, "algorithm": "bcd-lowcomp"})",
        R"({)" + kExample1 + R"(, "case": "ip", "uncertainty": {"delta_bar": 0.2}, "algorithm": "robust-sca"})",
        R"({)" + kExample1 + R"(, "case": "ip", "uncertainty": {"delta_bar": 0.2}, "algorithm": "robust-lowcomp"})",
        R"({)" + kExample1 + R"(, "case": "up", "algorithm": "stochastic", "samples": {"count": 1000, "batches": 10}, "config": {"max_iterations": 300}})",
        R"({)" + kExample1 + R"(, "algorithm": "baseline:lte"})",
        R"({)" + kExample1 + R"(, "algorithm": "baseline:fixed", "fixed_policy": ")" + policy + R"("})",
    };
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
        const auto file = write("s" + std::to_string(i) + ".json", scenarios[i]);
        const auto prefix = path("out" + std::to_string(i));
        ASSERT_EQ(run("optimize --scenario " + file + " --out " + prefix), 0) << last_output_;
        std::ifstream in(prefix + ".policy.csv");
        const auto p = read_policy_csv(in);
        EXPECT_EQ(p.devices(), 3);
        EXPECT_EQ(p.preambles(), 2);
        const std::string report = read(prefix + ".report.csv");
        EXPECT_NE(report.find("iteration,objective"), std::string::npos);
        EXPECT_NE(report.find("seed="), std::string::npos);
    }
}

TEST_F(Cli, PolicyToStdoutWithoutOutput)
{
    const auto file = write("s.json", "{" + kExample1 + "}");
    ASSERT_EQ(run("optimize --scenario " + file), 0);
    std::stringstream ss(last_output_);
    EXPECT_EQ(read_policy_csv(ss).devices(), 3);
}

TEST_F(Cli, EvaluateReproducesObjective)
{
    for (const std::string extra : {R"(, "algorithm": "bcd-exact")",
                                    R"(, "case": "ip", "uncertainty": {"delta_bar": 0.3}, "algorithm": "robust-sca")",
                                    R"(, "algorithm": "bcd-lowcomp")"}) {
        const auto file = write("s.json", "{" + kExample1 + extra + "}");
        ASSERT_EQ(run("optimize --scenario " + file + " --out " + path("r")), 0) << last_output_;
        ASSERT_EQ(run("evaluate --scenario " + file + " --policy " + path("r.policy.csv") + " --out " + path("m.csv")), 0)
            << last_output_;
        const auto m = metrics(path("m.csv"));
        const std::string key = extra.find("robust") != std::string::npos ? "worst_case"
                                : extra.find("lowcomp") != std::string::npos ? "approx"
                                                                              : "average";
        EXPECT_NEAR(std::stod(m.at(key)), report_objective(path("r.report.csv")), 1e-12) << extra;
    }
}

TEST_F(Cli, ZeroRadiusMakesAverageAndWorstCaseEqual)
{
    const auto file = write("s.json", "{" + kExample1 + R"(, "case": "ip", "uncertainty": {"delta_bar": 0}, "algorithm": "robust-lowcomp"})");
    ASSERT_EQ(run("optimize --scenario " + file + " --out " + path("r")), 0) << last_output_;
    ASSERT_EQ(run("evaluate --scenario " + file + " --policy " + path("r.policy.csv") + " --out " + path("m.csv")), 0);
    const auto m = metrics(path("m.csv"));
    EXPECT_NEAR(std::stod(m.at("average")), std::stod(m.at("worst_case")), 1e-14);
}

TEST_F(Cli, PerfectKnowledgeDominatesWorstCase)
{
    const auto pp = write("pp.json", "{" + kExample1 + R"(, "algorithm": "bcd-exact"})");
    const auto ip = write("ip.json", "{" + kExample1 + R"(, "case": "ip", "uncertainty": {"delta_bar": 0.3}, "algorithm": "robust-sca"})");
    ASSERT_EQ(run("optimize --scenario " + pp + " --out " + path("pp")), 0);
    ASSERT_EQ(run("optimize --scenario " + ip + " --out " + path("ip")), 0);
    EXPECT_GE(report_objective(path("pp.report.csv")), report_objective(path("ip.report.csv")));
}

TEST_F(Cli, UnavailableMetricBeyondDenseCap)
{
    const auto file = write("s.json", R"({"devices": 30, "preambles": 5, "activity": {"kind": "group", "groups": 10, "active_prob": 0.1}, "algorithm": "bcd-lowcomp"})");
    ASSERT_EQ(run("optimize --scenario " + file + " --out " + path("r")), 0) << last_output_;
    ASSERT_EQ(run("evaluate --scenario " + file + " --policy " + path("r.policy.csv") + " --out " + path("m.csv")), 0);
    const auto m = metrics(path("m.csv"));
    EXPECT_EQ(m.at("average"), "unavailable");
    EXPECT_NE(m.at("approx"), "unavailable");
}

TEST_F(Cli, Simulate)
{
    const auto file = write("s.json", "{" + kExample1 + "}");
    ASSERT_EQ(run("optimize --scenario " + file + " --out " + path("r")), 0);
    ASSERT_EQ(run("simulate --scenario " + file + " --policy " + path("r.policy.csv") + " --slots 100000 --seed 4 --out " +
                  path("sim.csv")),
              0)
        << last_output_;
    std::ifstream in(path("sim.csv"));
    const auto rows = csv::read(in, {"metric", "preamble", "value"}, "sim");
    double mean = 0.0, half = 0.0;
    for (const auto& r : rows) {
        if (r.fields[0] == "mean") mean = std::stod(r.fields[2]);
        if (r.fields[0] == "half_width") half = std::stod(r.fields[2]);
    }
    EXPECT_LE(std::abs(mean - report_objective(path("r.report.csv"))), 3.0 * half);
}

TEST_F(Cli, Oracle)
{
    const auto file = write("s.json", "{" + kExample1 + "}");
    ASSERT_EQ(run("oracle --scenario " + file + " --out " + path("o")), 0) << last_output_;
    const auto m = metrics(path("o.metrics.csv"));
    EXPECT_EQ(m.at("evaluated"), "8");
    ASSERT_EQ(run("optimize --scenario " + file + " --out " + path("r")), 0);
    EXPECT_NEAR(std::stod(m.at("objective")), report_objective(path("r.report.csv")), 1e-12);
}

TEST_F(Cli, Example1Sweep)
{
    const auto file = write("s.json", "{" + kExample1 + R"(, "sweep": {"parameter": "eta", "values": [-1, -0.5, 0, 0.5, 1], "schemes": ["scheme1", "scheme2", "scheme3", "scheme4"], "metrics": ["average"]}})");
    ASSERT_EQ(run("sweep --scenario " + file + " --out " + path("sweep.csv")), 0) << last_output_;
    std::ifstream in(path("sweep.csv"));
    std::map<std::string, std::map<std::string, double>> by_x;
    for (const auto& r : csv::read(in, {"x", "scheme", "metric", "value"}, "sweep")) by_x[r.fields[0]][r.fields[1]] = std::stod(r.fields[3]);
    ASSERT_EQ(by_x.size(), 5u);
    for (const auto& [x, schemes] : by_x) {
        ASSERT_EQ(schemes.size(), 4u);
        for (const auto& [name, v] : schemes) EXPECT_GE(schemes.at("scheme3"), v - 1e-15) << "eta " << x << " " << name;
    }
}

TEST_F(Cli, RobustSweepDominatesInWorstCase)
{
    const auto file = write("s.json", R"({"devices": 10, "preambles": 4, "activity": {"kind": "group", "groups": 2, "active_prob": 0.25}, "case": "ip", "uncertainty": {"delta_bar": 0.1}, "config": {"restarts": 1}, "sweep": {"parameter": "delta_bar", "values": [0.1, 0.3, 0.5], "schemes": ["bcd-exact", "robust-sca"], "metrics": ["worst_case"]}})");
    ASSERT_EQ(run("sweep --scenario " + file + " --out " + path("sweep.csv")), 0) << last_output_;
    std::ifstream in(path("sweep.csv"));
    std::map<std::string, std::map<std::string, double>> by_x;
    for (const auto& r : csv::read(in, {"x", "scheme", "metric", "value"}, "sweep")) by_x[r.fields[0]][r.fields[1]] = std::stod(r.fields[3]);
    ASSERT_EQ(by_x.size(), 3u);
    for (const auto& [x, s] : by_x) EXPECT_GE(s.at("robust-sca"), s.at("bcd-exact")) << "delta_bar " << x;
}

TEST_F(Cli, EmptySweepGrid)
{
    const auto file = write("s.json", "{" + kExample1 + R"(, "sweep": {"parameter": "eta", "values": []}})");
    EXPECT_EQ(run("sweep --scenario " + file + " --out " + path("sweep.csv")), 2);
    EXPECT_NE(last_output_.find("sweep grid is empty"), std::string::npos);
}

TEST_F(Cli, ValidationErrors)
{
    const auto unknown = write("u.json", R"({"devices": 3, "preambles": 2, "activity": {"kind": "example1", "p": 0.5, "eta": 1, "zeta": 2}})");
    EXPECT_EQ(run("optimize --scenario " + unknown), 2);
    EXPECT_NE(last_output_.find("$.activity.zeta"), std::string::npos) << last_output_;
    const auto syntax = write("x.json", "{\"devices\": ");
    EXPECT_EQ(run("optimize --scenario " + syntax), 2);
    const auto robust_pp = write("r.json", "{" + kExample1 + R"(, "algorithm": "robust-sca"})");
    EXPECT_EQ(run("optimize --scenario " + robust_pp), 2);
    const auto mmpc = write("m.json", "{" + kExample1 + R"(, "algorithm": "baseline:mmpc"})");
    EXPECT_EQ(run("optimize --scenario " + mmpc), 2);
    EXPECT_NE(last_output_.find("not implemented"), std::string::npos) << last_output_;
    EXPECT_EQ(run("optimize --scenario " + path("missing.json")), 2);
    EXPECT_EQ(run("optimize --scenario " + unknown + " --bogus"), 2);
    const auto policy = write("bad.csv", "device,preamble,prob\n1,1,0.5\nepsilon,,1\n");
    const auto ok = write("ok.json", "{" + kExample1 + "}");
    EXPECT_EQ(run("evaluate --scenario " + ok + " --policy " + policy), 2);
}

TEST_F(Cli, CapacityError)
{
    const auto file = write("s.json", R"({"devices": 1000, "preambles": 50, "activity": {"kind": "group", "groups": 100, "active_prob": 0.03}, "algorithm": "bcd-exact"})");
    EXPECT_EQ(run("optimize --scenario " + file), 3);
}

TEST_F(Cli, SampleFileScenario)
{
    const auto samples = sample(from_group_model({4, 2, 0.4}), 200, 10, 3);
    {
        std::ofstream out(path("samples.bin"), std::ios::binary);
        write_samples_binary(out, samples);
        std::ofstream csv_out(path("samples.csv"));
        write_samples_csv(csv_out, samples);
    }
    for (const std::string name : {"samples.bin", "samples.csv"}) {
        const auto file = write("s.json", R"({"devices": 4, "preambles": 2, "activity": {"kind": "samples"}, "case": "up", "algorithm": "stochastic", "samples": {"file": ")" + name + R"(", "batches": 10}, "config": {"max_iterations": 200}})");
        ASSERT_EQ(run("optimize --scenario " + file + " --out " + path("r")), 0) << last_output_;
        ASSERT_EQ(run("evaluate --scenario " + file + " --policy " + path("r.policy.csv") + " --out " + path("m.csv")), 0);
        EXPECT_NEAR(std::stod(metrics(path("m.csv")).at("sample_average")), report_objective(path("r.report.csv")), 1e-12);
    }
}

TEST_F(Cli, SeedOverrideIsDeterministic)
{
    const auto file = write("s.json", R"({"devices": 6, "preambles": 2, "activity": {"kind": "group", "groups": 3, "active_prob": 0.3}, "algorithm": "bcd-exact"})");
    ASSERT_EQ(run("optimize --scenario " + file + " --seed 5 --restarts 2 --out " + path("a")), 0);
    ASSERT_EQ(run("optimize --scenario " + file + " --seed 5 --restarts 2 --out " + path("b")), 0);
    EXPECT_EQ(read(path("a.policy.csv")), read(path("b.policy.csv")));
    EXPECT_NE(read(path("a.report.csv")).find("seed=5"), std::string::npos);
}
