#pragma once

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "activity.hpp"
#include "errors.hpp"
#include "policy.hpp"
#include "report.hpp"
#include "simulator.hpp"

namespace rach {

// Shortest text that parses back to the same double.
inline std::string format_double(double v)
{
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    for (int precision = 15; precision <= 17; ++precision) {
        std::snprintf(buf, sizeof buf, "%.*g", precision, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

namespace csv {

struct Row {
    std::size_t line = 0;
    std::vector<std::string> fields;
};

inline std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    for (auto& f : out) {
        const auto b = f.find_first_not_of(" \t");
        const auto e = f.find_last_not_of(" \t");
        f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
    }
    return out;
}

// Reads the header and data rows, skipping blank lines and '#' comments.
inline std::vector<Row> read(std::istream& in, const std::vector<std::string>& header, const std::string& what)
{
    std::string line;
    std::size_t number = 0;
    bool have_header = false;
    std::vector<Row> rows;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty() || line == "\r" || line[0] == '#') continue;
        auto fields = split(line);
        if (!have_header) {
            if (fields != header) {
                std::string want;
                for (std::size_t i = 0; i < header.size(); ++i) want += (i ? "," : "") + header[i];
                throw ValidationError(what + ": line " + std::to_string(number) + ": expected header '" + want + "'");
            }
            have_header = true;
            continue;
        }
        if (fields.size() != header.size())
            throw ValidationError(what + ": line " + std::to_string(number) + ": expected " +
                                  std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
        rows.push_back({number, std::move(fields)});
    }
    if (!have_header) throw ValidationError(what + ": missing header row");
    return rows;
}

inline double to_double(const std::string& s, const std::string& what, std::size_t line)
{
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE)
        throw ValidationError(what + ": line " + std::to_string(line) + ": '" + s + "' is not a number");
    return v;
}

inline std::uint64_t to_u64(const std::string& s, const std::string& what, std::size_t line)
{
    char* end = nullptr;
    errno = 0;
    const int base = s.rfind("0x", 0) == 0 || s.rfind("0X", 0) == 0 ? 16 : 10;
    const unsigned long long v = std::strtoull(s.c_str(), &end, base);
    if (s.empty() || s[0] == '-' || end != s.c_str() + s.size() || errno == ERANGE)
        throw ValidationError(what + ": line " + std::to_string(line) + ": '" + s + "' is not a nonnegative integer");
    return v;
}

} // namespace csv

inline std::ifstream open_input(const std::string& path, std::ios::openmode mode = std::ios::in)
{
    std::ifstream in(path, mode);
    if (!in) throw ValidationError("cannot open '" + path + "' for reading");
    return in;
}

inline std::ofstream open_output(const std::string& path, std::ios::openmode mode = std::ios::out)
{
    std::ofstream out(path, mode);
    if (!out) throw ValidationError("cannot open '" + path + "' for writing");
    return out;
}

// ---------------------------------------------------------------------------
// Policy: device,preamble,prob rows (1-based) and a final epsilon row
// ---------------------------------------------------------------------------

inline void write_policy_csv(std::ostream& out, const SelectionPolicy& p, const std::string& comment = "")
{
    if (!comment.empty()) out << "# " << comment << '\n';
    out << "device,preamble,prob\n";
    for (int k = 0; k < p.devices(); ++k)
        for (int n = 0; n < p.preambles(); ++n)
            out << k + 1 << ',' << n + 1 << ',' << format_double(p.prob(k, n)) << '\n';
    out << "epsilon,," << format_double(p.epsilon()) << '\n';
}

inline SelectionPolicy read_policy_csv(std::istream& in, const std::string& what = "policy")
{
    const auto rows = csv::read(in, {"device", "preamble", "prob"}, what);
    std::optional<double> eps;
    std::map<std::pair<std::uint64_t, std::uint64_t>, double> entries;
    std::uint64_t K = 0, N = 0;
    for (const auto& r : rows) {
        if (r.fields[0] == "epsilon") {
            if (eps) throw ValidationError(what + ": line " + std::to_string(r.line) + ": duplicate epsilon row");
            eps = csv::to_double(r.fields[2], what, r.line);
            continue;
        }
        const auto k = csv::to_u64(r.fields[0], what, r.line);
        const auto n = csv::to_u64(r.fields[1], what, r.line);
        if (k == 0 || n == 0) throw ValidationError(what + ": line " + std::to_string(r.line) + ": indices are 1-based");
        if (!entries.emplace(std::make_pair(k, n), csv::to_double(r.fields[2], what, r.line)).second)
            throw ValidationError(what + ": line " + std::to_string(r.line) + ": duplicate entry");
        K = std::max(K, k);
        N = std::max(N, n);
    }
    if (!eps) throw ValidationError(what + ": missing epsilon row");
    if (entries.size() != K * N) throw ValidationError(what + ": selection matrix is incomplete");
    std::vector<double> a(K * N);
    for (const auto& [key, v] : entries) a[(key.first - 1) * N + key.second - 1] = v;
    return SelectionPolicy(static_cast<int>(K), static_cast<int>(N), std::move(a), *eps);
}

// ---------------------------------------------------------------------------
// Optimizer report: metadata comments, then iteration,objective
// ---------------------------------------------------------------------------

inline void write_report_csv(std::ostream& out, const OptimizerReport& r, const std::string& comment = "")
{
    if (!comment.empty()) out << "# " << comment << '\n';
    out << "# algorithm=" << r.algorithm << " termination=" << to_string(r.termination)
        << " iterations=" << r.iterations << " best_restart=" << r.best_restart << " seed=" << r.seed
        << " tie_events=" << r.tie_events << " kkt_residual=" << format_double(r.kkt_residual)
        << " objective=" << format_double(r.objective) << '\n';
    if (!r.restart_objectives.empty()) {
        out << "# restart_objectives=";
        for (std::size_t i = 0; i < r.restart_objectives.size(); ++i)
            out << (i ? ";" : "") << format_double(r.restart_objectives[i]);
        out << '\n';
    }
    out << "iteration,objective\n";
    for (std::size_t i = 0; i < r.trajectory.size(); ++i) out << i + 1 << ',' << format_double(r.trajectory[i]) << '\n';
}

// ---------------------------------------------------------------------------
// Dense distributions: mask,prob
// ---------------------------------------------------------------------------

inline void write_distribution_csv(std::ostream& out, const JointActivityDistribution& d, const std::string& comment = "")
{
    if (!comment.empty()) out << "# " << comment << '\n';
    out << "mask,prob\n";
    for (Mask m = 0; m < d.size(); ++m)
        if (d.prob(m) != 0.0) out << m << ',' << format_double(d.prob(m)) << '\n';
}

// Masks not listed have probability zero.
inline JointActivityDistribution read_distribution_csv(std::istream& in, int devices,
                                                       const std::string& what = "distribution")
{
    require(devices >= 1, "device count must be at least 1");
    require_dense_capacity(devices);
    const auto rows = csv::read(in, {"mask", "prob"}, what);
    std::vector<double> p(pattern_count(devices), 0.0);
    std::vector<bool> seen(p.size(), false);
    for (const auto& r : rows) {
        const auto m = csv::to_u64(r.fields[0], what, r.line);
        if (m >= p.size())
            throw ValidationError(what + ": line " + std::to_string(r.line) + ": mask exceeds 2^K - 1");
        if (seen[m]) throw ValidationError(what + ": line " + std::to_string(r.line) + ": duplicate mask");
        seen[m] = true;
        p[m] = csv::to_double(r.fields[1], what, r.line);
    }
    return JointActivityDistribution::from_probs(devices, std::move(p));
}

// ---------------------------------------------------------------------------
// Samples: sample_index,mask (decimal up to 64 devices, hex words beyond)
// ---------------------------------------------------------------------------

inline std::string mask_text(const SampleSet& s, std::size_t i)
{
    if (s.devices() <= 64) return std::to_string(s.mask(i));
    const auto w = s.words(i);
    std::string out = "0x";
    char buf[17];
    for (std::size_t j = w.size(); j-- > 0;) {
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(w[j]));
        out += buf;
    }
    return out;
}

inline void write_samples_csv(std::ostream& out, const SampleSet& s, const std::string& comment = "")
{
    if (!comment.empty()) out << "# " << comment << '\n';
    out << "# devices=" << s.devices() << " batches=" << s.batches() << '\n';
    out << "sample_index,mask\n";
    for (std::size_t i = 0; i < s.size(); ++i) out << i << ',' << mask_text(s, i) << '\n';
}

inline std::vector<std::uint64_t> parse_mask_words(const std::string& text, int devices, const std::string& what,
                                                   std::size_t line)
{
    const std::size_t words = (static_cast<std::size_t>(devices) + 63) / 64;
    std::vector<std::uint64_t> out(words, 0);
    const auto bad = [&](const std::string& why) {
        return ValidationError(what + ": line " + std::to_string(line) + ": " + why);
    };
    if (text.rfind("0x", 0) == 0 || text.rfind("0X", 0) == 0) {
        const std::string hex = text.substr(2);
        if (hex.empty()) throw bad("empty hex mask");
        for (std::size_t pos = 0; pos < hex.size(); ++pos) {
            const char ch = hex[hex.size() - 1 - pos];
            int v = 0;
            if (ch >= '0' && ch <= '9') v = ch - '0';
            else if (ch >= 'a' && ch <= 'f') v = ch - 'a' + 10;
            else if (ch >= 'A' && ch <= 'F') v = ch - 'A' + 10;
            else throw bad("'" + text + "' is not a hex mask");
            if (v == 0) continue;
            const std::size_t bit = pos * 4;
            if (bit / 64 >= words) throw bad("mask has bits beyond device " + std::to_string(devices));
            out[bit / 64] |= static_cast<std::uint64_t>(v) << (bit % 64);
        }
    } else {
        out[0] = csv::to_u64(text, what, line);
    }
    const int spare = static_cast<int>(words * 64) - devices;
    if (spare > 0 && (out.back() >> (64 - spare)) != 0) throw bad("mask has bits beyond device " + std::to_string(devices));
    return out;
}

inline SampleSet read_samples_csv(std::istream& in, int devices, std::size_t batches, const std::string& what = "samples")
{
    require(devices >= 1, "device count must be at least 1");
    const auto rows = csv::read(in, {"sample_index", "mask"}, what);
    if (rows.empty()) throw ValidationError(what + ": no samples");
    if (batches == 0 || rows.size() % batches != 0)
        throw ValidationError(what + ": sample count " + std::to_string(rows.size()) + " is not divisible by M = " +
                              std::to_string(batches));
    SampleSet s(devices, rows.size(), batches);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (csv::to_u64(r.fields[0], what, r.line) != i)
            throw ValidationError(what + ": line " + std::to_string(r.line) + ": sample indices must be 0, 1, 2, ...");
        const auto words = parse_mask_words(r.fields[1], devices, what, r.line);
        for (int k = 0; k < devices; ++k)
            if ((words[static_cast<std::size_t>(k) / 64] >> (k % 64)) & 1u) s.set_active(i, k);
    }
    return s;
}

/*
 * Packed binary samples: magic "RACHSMP1", then little-endian u64 K, I, M,
 * then I * ceil(K / 64) mask words.
 */
inline void write_samples_binary(std::ostream& out, const SampleSet& s)
{
    const auto put = [&out](std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        out.write(reinterpret_cast<const char*>(b), 8);
    };
    out.write("RACHSMP1", 8);
    put(static_cast<std::uint64_t>(s.devices()));
    put(s.size());
    put(s.batches());
    for (std::size_t i = 0; i < s.size(); ++i)
        for (auto w : s.words(i)) put(w);
}

inline SampleSet read_samples_binary(std::istream& in, const std::string& what = "samples")
{
    const auto get = [&]() {
        unsigned char b[8];
        if (!in.read(reinterpret_cast<char*>(b), 8)) throw ValidationError(what + ": truncated binary sample file");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    };
    char magic[8];
    if (!in.read(magic, 8) || std::string(magic, 8) != "RACHSMP1")
        throw ValidationError(what + ": not a packed sample file");
    const auto K = get(), I = get(), M = get();
    if (K == 0 || K > 1u << 20 || I == 0 || M == 0 || I % M != 0)
        throw ValidationError(what + ": invalid header (K, I, M)");
    SampleSet s(static_cast<int>(K), I, M);
    const std::size_t words = (K + 63) / 64;
    for (std::size_t i = 0; i < I; ++i)
        for (std::size_t w = 0; w < words; ++w) {
            const auto v = get();
            for (int b = 0; b < 64; ++b)
                if ((v >> b) & 1u) {
                    const std::size_t k = w * 64 + b;
                    if (k >= K) throw ValidationError(what + ": mask has bits beyond device " + std::to_string(K));
                    s.set_active(i, static_cast<int>(k));
                }
        }
    return s;
}

// ---------------------------------------------------------------------------
// Simulation results and metrics: long format
// ---------------------------------------------------------------------------

inline void write_sim_csv(std::ostream& out, const SimResult& r, const std::string& comment = "")
{
    if (!comment.empty()) out << "# " << comment << '\n';
    out << "# seed=" << r.seed << '\n';
    out << "metric,preamble,value\n";
    out << "slots,," << r.slots << '\n';
    out << "mean,," << format_double(r.mean) << '\n';
    out << "sd,," << format_double(r.sd) << '\n';
    out << "half_width,," << format_double(r.half_width) << '\n';
    for (std::size_t n = 0; n < r.preamble_success.size(); ++n)
        out << "preamble_success," << n + 1 << ',' << format_double(r.preamble_success[n]) << '\n';
}

// Unavailable metrics are written with the value "unavailable".
using Metrics = std::vector<std::pair<std::string, std::optional<double>>>;

inline void write_metrics_csv(std::ostream& out, const Metrics& m, const std::string& comment = "")
{
    if (!comment.empty()) out << "# " << comment << '\n';
    out << "metric,value\n";
    for (const auto& [name, v] : m) out << name << ',' << (v ? format_double(*v) : "unavailable") << '\n';
}

} // namespace rach
