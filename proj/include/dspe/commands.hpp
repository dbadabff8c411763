#pragma once

// Subcommand bodies. Each one computes everything first and writes its files
// last, so a failure leaves the output directory untouched.

#include "dspe/booth.hpp"
#include "dspe/config.hpp"
#include "dspe/posit.hpp"
#include "dspe/report.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace dspe {

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
};

inline nlohmann::json read_json_file(const std::string& path, const char* what)
{
    std::ifstream f(path);
    if (!f) throw ConfigError(std::string("cannot open ") + what + " " + path);
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string(what) + " " + path + ": " + e.what());
    }
}

// Config precedence: built-in defaults, then the file, then command-line flags.
struct ConfigSource {
    nlohmann::json doc = nlohmann::json::object();
    std::string base_dir = ".";

    static ConfigSource load(const std::string& path)
    {
        ConfigSource s;
        if (path.empty()) return s;
        s.doc = read_json_file(path, "config");
        const auto parent = std::filesystem::path(path).parent_path();
        s.base_dir = parent.empty() ? "." : parent.string();
        return s;
    }

    RunConfig resolve(const Overrides& o, const nlohmann::json* point = nullptr) const
    {
        nlohmann::json j = doc;
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        if (point) {
            for (auto it = point->begin(); it != point->end(); ++it) set_path(j, it.key(), it.value());
        }
        if (o.seed) j["seed"] = *o.seed;
        if (o.out) j["output_dir"] = *o.out;
        return config_from_json(j, base_dir);
    }
};

inline void write_file(const std::filesystem::path& p, const std::string& data)
{
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << data;
    if (!f) throw std::runtime_error("write failed: " + p.string());
}

inline std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// run

struct RunFiles {
    std::string report;
    std::string metrics_csv;
    std::string decisions_csv;
    std::string batches_csv;
};

inline RunFiles render_run(const Experiment& ex)
{
    return {dump(report_json(ex)), csv_header() + csv_row(ex), decisions_csv(ex.features), batches_csv(ex.features)};
}

inline Experiment cmd_run(RunConfig cfg)
{
    cfg.sim.record_batches = true;
    auto ex = run_experiment(cfg);
    const auto files = render_run(ex);
    const std::filesystem::path dir(cfg.output_dir);
    std::filesystem::create_directories(dir);
    write_file(dir / "report.json", files.report);
    write_file(dir / "metrics.csv", files.metrics_csv);
    write_file(dir / "decisions.csv", files.decisions_csv);
    write_file(dir / "batches.csv", files.batches_csv);
    return ex;
}

// ---------------------------------------------------------------------------
// sweep

// Grid: an object mapping dotted config keys to non-empty arrays. Points are the
// cartesian product with keys in lexicographic order, last key varying fastest.
inline std::vector<nlohmann::json> grid_points(const nlohmann::json& grid)
{
    if (!grid.is_object() || grid.empty()) throw ConfigError("grid must be a non-empty object");
    std::vector<std::pair<std::string, nlohmann::json>> axes;
    for (auto it = grid.begin(); it != grid.end(); ++it) {
        if (!it.value().is_array() || it.value().empty()) {
            throw ConfigError("grid axis '" + it.key() + "' must be a non-empty array");
        }
        axes.emplace_back(it.key(), it.value());
    }
    std::vector<nlohmann::json> points{nlohmann::json::object()};
    for (const auto& [key, values] : axes) {
        std::vector<nlohmann::json> next;
        for (const auto& p : points) {
            for (const auto& v : values) {
                auto q = p;
                q[key] = v;
                next.push_back(std::move(q));
            }
        }
        points = std::move(next);
    }
    return points;
}

struct SweepResult {
    std::vector<nlohmann::json> points;
    std::vector<Experiment> runs;
    std::string csv;
    nlohmann::ordered_json summary;
};

inline std::string point_name(std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "point_%03zu.json", i);
    return buf;
}

inline SweepResult cmd_sweep(const ConfigSource& src, const nlohmann::json& grid, const Overrides& o,
                             unsigned threads = 0)
{
    SweepResult sr;
    sr.points = grid_points(grid);
    std::vector<RunConfig> cfgs;
    for (const auto& p : sr.points) cfgs.push_back(src.resolve(o, &p)); // all config errors surface here
    const std::filesystem::path dir(cfgs.front().output_dir);

    sr.runs.resize(cfgs.size());
    std::vector<std::string> reports(cfgs.size());
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(cfgs.size()));
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(threads);
    auto worker = [&](unsigned w) {
        try {
            for (std::size_t i; (i = next++) < cfgs.size();) {
                sr.runs[i] = run_experiment(cfgs[i]);
                reports[i] = dump(report_json(sr.runs[i]));
            }
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(worker, w);
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    sr.csv = "point," + csv_header();
    sr.summary["points"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < sr.runs.size(); ++i) {
        sr.csv += std::to_string(i) + "," + csv_row(sr.runs[i]);
        const auto& r = sr.runs[i].features;
        sr.summary["points"].push_back({{"point", i},
                                        {"overrides", sr.points[i]},
                                        {"report", point_name(i)},
                                        {"config_hash", config_hash(sr.runs[i].cfg)},
                                        {"early_skip", r.early_skips()},
                                        {"ops_saved_fraction", sr.runs[i].ops_saved_fraction()}});
    }

    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < reports.size(); ++i) write_file(dir / point_name(i), reports[i]);
    write_file(dir / "sweep.csv", sr.csv);
    write_file(dir / "sweep.json", dump(sr.summary));
    return sr;
}

// ---------------------------------------------------------------------------
// audit

inline AuditReport cmd_audit(const RunConfig& cfg, double sample_rate)
{
    const auto rep = audit_roots(cfg, sample_rate);
    const std::filesystem::path dir(cfg.output_dir);
    std::filesystem::create_directories(dir);
    write_file(dir / "audit.json", dump(audit_json(rep)));
    return rep;
}

// ---------------------------------------------------------------------------
// conformance

struct ConformanceResult {
    std::size_t posit_cases = 0;
    std::size_t posit_mismatches = 0;
    std::size_t booth_cases = 0;
    std::size_t booth_mismatches = 0;
    std::vector<std::string> failures; // first ten
    std::string posit_csv;
    std::string booth_csv;

    bool ok() const { return posit_mismatches == 0 && booth_mismatches == 0; }
};

// Reference product: the exact dyadic product of the decoded operands, rounded once.
inline posit::PositWord reference_multiply(posit::PositWord a, posit::PositWord b)
{
    const auto da = posit::decode(a), db = posit::decode(b);
    if (da.special == posit::Special::NaR || db.special == posit::Special::NaR) return posit::PositWord{posit::kNaR};
    if (da.special == posit::Special::Zero || db.special == posit::Special::Zero) return posit::PositWord{posit::kZero};
    const auto va = posit::exact_value(da), vb = posit::exact_value(db);
    return posit::encode(posit::Dyadic{va.sign * vb.sign, va.mantissa * vb.mantissa, va.exponent + vb.exponent});
}

inline ConformanceResult run_conformance()
{
    ConformanceResult r;
    auto fail = [&](std::string msg) {
        if (r.failures.size() < 10) r.failures.push_back(std::move(msg));
    };
    std::ostringstream pc;
    pc << "a_bits,b_bits,result_bits,mode,pe_cells\n";
    for (int a = 0; a < 256; ++a) {
        for (int b = 0; b < 256; ++b) {
            const posit::PositWord wa{static_cast<std::uint8_t>(a)}, wb{static_cast<std::uint8_t>(b)};
            const auto got = posit::da_multiply(wa, wb);
            const auto want = reference_multiply(wa, wb);
            const int mode = std::min(posit::detect_mode(wa).mode, posit::detect_mode(wb).mode);
            ++r.posit_cases;
            if (got.value != want || got.cost.pe_cells != posit::pe_cells_for_mode(mode)) {
                ++r.posit_mismatches;
                char buf[96];
                std::snprintf(buf, sizeof buf, "posit 0x%02X * 0x%02X -> 0x%02X, expected 0x%02X", a, b,
                              got.value.bits, want.bits);
                fail(buf);
            }
            pc << a << ',' << b << ',' << int(got.value.bits) << ',' << got.cost.mode << ',' << got.cost.pe_cells
               << '\n';
        }
    }
    r.posit_csv = pc.str();

    std::ostringstream bc;
    bc << "value,radix,digits,recombined\n";
    for (int x = -128; x <= 127; ++x) {
        for (auto radix : {booth::Radix::R4, booth::Radix::R8}) {
            const auto d = booth::encode(static_cast<std::int8_t>(x), radix);
            const long base = radix == booth::Radix::R4 ? 4 : 8;
            long sum = 0, weight = 1;
            std::string digits;
            for (int i = 0; i < d.count; ++i) {
                sum += d.digits[i] * weight;
                weight *= base;
                digits += (i ? " " : "") + std::to_string(d.digits[i]);
            }
            ++r.booth_cases;
            const int expect_count = radix == booth::Radix::R4 ? 4 : 3;
            if (sum != x || d.count != expect_count) {
                ++r.booth_mismatches;
                fail("booth " + std::string(booth::to_string(radix)) + " " + std::to_string(x) + " -> "
                     + std::to_string(sum));
            }
            bc << x << ',' << booth::to_string(radix) << ',' << digits << ',' << sum << '\n';
        }
    }
    r.booth_csv = bc.str();
    return r;
}

inline nlohmann::ordered_json conformance_json(const ConformanceResult& r)
{
    return {{"posit_cases", r.posit_cases},     {"posit_mismatches", r.posit_mismatches},
            {"booth_cases", r.booth_cases},     {"booth_mismatches", r.booth_mismatches},
            {"passed", r.ok()},                 {"first_failures", r.failures}};
}

inline ConformanceResult cmd_conformance(const std::string& out_dir)
{
    auto r = run_conformance();
    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    write_file(dir / "posit_conformance.csv", r.posit_csv);
    write_file(dir / "booth_conformance.csv", r.booth_csv);
    write_file(dir / "conformance.json", dump(conformance_json(r)));
    return r;
}

} // namespace dspe
