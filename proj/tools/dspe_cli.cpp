// dspe: experiment runner for the accelerator model.
//
//   dspe run         [--config PATH] [--seed N] [--out DIR]
//   dspe sweep       --grid PATH [--config PATH] [--seed N] [--out DIR]
//   dspe audit       [--config PATH] [--seed N] [--out DIR] [--sample-rate X]
//   dspe conformance [--out DIR]
//
// Exit codes: 0 success, 1 usage or config error, 2 conformance failure.

#include "dspe/commands.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <cstdlib>

namespace {

void setup_logging()
{
    auto logger = spdlog::stderr_color_mt("dspe");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    const char* env = std::getenv("DSPE_LOG");
    spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
}

dspe::Overrides overrides(const std::optional<std::uint64_t>& seed, const std::string& out)
{
    dspe::Overrides o;
    o.seed = seed;
    if (!out.empty()) o.out = out;
    return o;
}

} // namespace

int main(int argc, char** argv)
{
    setup_logging();

    CLI::App app{"Event-count simulator for posit/Booth/Merkle-pruned transformer inference"};
    app.require_subcommand(1);

    std::string config, out, grid;
    std::optional<std::uint64_t> seed;
    double sample_rate = 1.0;

    auto* run = app.add_subcommand("run", "Baseline and features-on run with a metrics report");
    auto* sweep = app.add_subcommand("sweep", "Cartesian parameter sweep");
    auto* audit = app.add_subcommand("audit", "Replay pruning decisions against complete trees");
    auto* conf = app.add_subcommand("conformance", "Exhaustive posit multiply and Booth recombination checks");
    for (auto* sub : {run, sweep, audit}) {
        sub->add_option("--config", config, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "Overrides the config seed");
        sub->add_option("--out", out, "Output directory (overrides output_dir)");
    }
    sweep->add_option("--grid", grid, "JSON grid of dotted keys to value lists")->required()->check(CLI::ExistingFile);
    audit->add_option("--sample-rate", sample_rate, "Fraction of decisions to audit, in (0, 1]");
    conf->add_option("--out", out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*conf) {
            const auto r = dspe::cmd_conformance(out.empty() ? "." : out);
            std::printf("posit: %zu cases, %zu mismatches\nbooth: %zu cases, %zu mismatches\n", r.posit_cases,
                        r.posit_mismatches, r.booth_cases, r.booth_mismatches);
            if (!r.ok()) {
                for (const auto& f : r.failures) std::fprintf(stderr, "mismatch: %s\n", f.c_str());
                return 2;
            }
            return 0;
        }

        const auto src = dspe::ConfigSource::load(config);
        const auto o = overrides(seed, out);
        if (*run) {
            const auto cfg = src.resolve(o);
            spdlog::info("run: config {} seed {}", dspe::config_hash(cfg), cfg.sim.seed);
            const auto ex = dspe::cmd_run(cfg);
            std::printf("ops_saved_fraction %.6f, min_cosine %.9f, report %s/report.json\n", ex.ops_saved_fraction(),
                        ex.fidelity.min_cosine, cfg.output_dir.c_str());
        } else if (*sweep) {
            const auto g = dspe::read_json_file(grid, "grid");
            const auto sr = dspe::cmd_sweep(src, g, o);
            spdlog::info("sweep: {} points", sr.runs.size());
            std::printf("%zu points, %s/sweep.csv\n", sr.runs.size(), sr.runs.front().cfg.output_dir.c_str());
        } else if (*audit) {
            if (!(sample_rate > 0.0 && sample_rate <= 1.0)) throw dspe::ConfigError("--sample-rate must lie in (0, 1]");
            const auto cfg = src.resolve(o);
            const auto rep = dspe::cmd_audit(cfg, sample_rate);
            std::printf("agreement %.6f (early_skip %.6f, diff_reuse %.6f, full_compute %.6f)\n", rep.agreement(),
                        rep.early_skip.agreement(), rep.diff_reuse.agreement(), rep.full_compute.agreement());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "dspe: %s\n", e.what());
        return 1;
    }
    return 0;
}
