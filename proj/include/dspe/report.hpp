#pragma once

// Paired runs (baseline and features-on), audits, and their JSON/CSV forms.
// Reports contain no timestamps or host data, so equal configs give equal bytes.

#include "dspe/arch.hpp"
#include "dspe/config.hpp"
#include "dspe/merkle.hpp"
#include "dspe/model.hpp"
#include "dspe/workload.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace dspe {

inline std::string fmt_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

// The resolved config as embedded in reports. The output location is left out
// so a report does not depend on where it was written.
inline nlohmann::ordered_json embedded_config(const RunConfig& c)
{
    auto j = config_to_json(c);
    j.erase("output_dir");
    return j;
}

struct Experiment {
    RunConfig cfg;
    WorkloadTrace trace;
    ToyModel model;
    RunResult baseline;
    RunResult features;
    Fidelity fidelity;

    double ops_saved_fraction() const
    {
        const auto& l = features.ledger;
        return ratio(static_cast<double>(l.ops_skipped + l.ops_reused), static_cast<double>(l.ops_demanded));
    }
};

inline Experiment run_experiment(const RunConfig& cfg)
{
    Experiment ex;
    ex.cfg = cfg;
    ex.trace = generate_trace(cfg.trace);
    ex.model = ToyModel::random(cfg.sim.dims, cfg.sim.seed);
    ex.baseline = baseline_run(ex.trace, ex.model, cfg.sim);
    ex.features = run_decode(ex.trace, ex.model, cfg.sim);
    ex.fidelity = compare_outputs(ex.baseline.outputs, ex.features.outputs);
    return ex;
}

inline nlohmann::ordered_json kinds_json(const KindCounts& k)
{
    return {{"early_skip", k.early_skip}, {"diff_reuse", k.diff_reuse}, {"full_compute", k.full_compute}};
}

inline nlohmann::ordered_json report_json(const Experiment& ex)
{
    const auto& b = ex.baseline.ledger;
    const auto& f = ex.features.ledger;
    nlohmann::ordered_json j;
    j["config"] = embedded_config(ex.cfg);
    j["config_hash"] = config_hash(ex.cfg);
    j["seed"] = ex.cfg.sim.seed;
    j["trace"] = ex.trace.manifest();
    j["backend"] = to_string(ex.features.backend);
    j["baseline"] = b.to_json();
    j["features_on"] = f.to_json();
    j["savings"] = {
        {"dram_reads_ratio", ratio(static_cast<double>(f.dram_reads), static_cast<double>(b.dram_reads))},
        {"dram_accesses_ratio", ratio(static_cast<double>(f.dram_accesses()), static_cast<double>(b.dram_accesses()))},
        {"sram_accesses_ratio", ratio(static_cast<double>(f.sram_accesses()), static_cast<double>(b.sram_accesses()))},
        {"macs_ratio", ratio(static_cast<double>(f.macs), static_cast<double>(b.macs))},
        {"energy_ratio", ratio(f.modeled_energy, b.modeled_energy)},
        {"ops_saved_fraction", ex.ops_saved_fraction()}};
    j["mips"] = {{"projection", kinds_json(ex.features.projection_decisions)},
                 {"experts", kinds_json(ex.features.expert_decisions)},
                 {"attention_ops_reused", ex.features.attention_reused}};
    const double n_modes = static_cast<double>(f.dappm_modes[0] + f.dappm_modes[1] + f.dappm_modes[2]);
    j["dappm"] = {{"mode0_fraction", ratio(static_cast<double>(f.dappm_modes[0]), n_modes)},
                  {"mode1_fraction", ratio(static_cast<double>(f.dappm_modes[1]), n_modes)},
                  {"mode2_fraction", ratio(static_cast<double>(f.dappm_modes[2]), n_modes)},
                  {"mean_pe_cells", f.mean_pe_cells()}};
    j["fidelity"] = {{"min_cosine", ex.fidelity.min_cosine},
                     {"mean_cosine", ex.fidelity.mean_cosine},
                     {"max_abs_error", ex.fidelity.max_abs_error},
                     {"bit_exact", ex.fidelity.bit_exact},
                     {"per_token_cosine", ex.fidelity.per_token}};
    return j;
}

inline std::vector<std::string> csv_columns()
{
    std::vector<std::string> cols{"config_hash", "seed", "duplicate_rate", "rho"};
    for (const auto& n : CostLedger::counter_names()) cols.push_back(n);
    for (const char* n : {"baseline_dram_reads", "baseline_sram_accesses", "baseline_macs", "baseline_modeled_energy",
                          "early_skip", "diff_reuse", "full_compute", "ops_saved_fraction", "min_cosine",
                          "mean_cosine", "bit_exact"}) {
        cols.push_back(n);
    }
    return cols;
}

inline std::string csv_header()
{
    std::string s;
    for (const auto& c : csv_columns()) s += (s.empty() ? "" : ",") + c;
    return s + "\n";
}

inline std::string csv_row(const Experiment& ex)
{
    const auto& f = ex.features.ledger;
    const auto& b = ex.baseline.ledger;
    const auto fj = f.to_json();
    std::vector<std::string> v{config_hash(ex.cfg), std::to_string(ex.cfg.sim.seed),
                               fmt_double(ex.cfg.trace.duplicate_rate), fmt_double(ex.cfg.trace.rho)};
    for (const auto& n : CostLedger::counter_names()) {
        const auto& x = fj.at(n);
        v.push_back(x.is_number_float() ? fmt_double(x.get<double>()) : std::to_string(x.get<std::uint64_t>()));
    }
    const auto& pd = ex.features.projection_decisions;
    const auto& ed = ex.features.expert_decisions;
    v.push_back(std::to_string(b.dram_reads));
    v.push_back(std::to_string(b.sram_accesses()));
    v.push_back(std::to_string(b.macs));
    v.push_back(fmt_double(b.modeled_energy));
    v.push_back(std::to_string(pd.early_skip + ed.early_skip));
    v.push_back(std::to_string(pd.diff_reuse + ed.diff_reuse));
    v.push_back(std::to_string(pd.full_compute + ed.full_compute));
    v.push_back(fmt_double(ex.ops_saved_fraction()));
    v.push_back(fmt_double(ex.fidelity.min_cosine));
    v.push_back(fmt_double(ex.fidelity.mean_cosine));
    v.push_back(ex.fidelity.bit_exact ? "1" : "0");
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
    return s + "\n";
}

inline std::string decisions_csv(const RunResult& r)
{
    std::ostringstream os;
    os << "token,expert,level,delta_h,decision,ref\n";
    for (const auto& d : r.decisions) {
        os << d.token << ',' << (d.site < 0 ? std::string("qkv") : std::to_string(d.site)) << ',' << d.decision.level
           << ',' << d.decision.delta_h << ',' << mips::to_string(d.decision.kind) << ',' << d.decision.result << '\n';
    }
    return os.str();
}

inline std::string batches_csv(const RunResult& r)
{
    std::ostringstream os;
    os << "matrix,batch,column,path,order,flips,replays,skips\n";
    for (const auto& b : r.batches) {
        std::string order;
        for (int l : b.order) order += (order.empty() ? "" : " ") + std::to_string(l);
        os << b.matrix << ',' << b.batch << ',' << b.column << ',' << booth::to_string(b.path) << ',' << order << ','
           << b.flips << ',' << b.replays << ',' << b.skips << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Audit

struct KindAudit {
    std::uint64_t sampled = 0;
    std::uint64_t agree = 0;
    std::uint64_t output_match = 0;

    double agreement() const { return sampled == 0 ? 1.0 : static_cast<double>(agree) / static_cast<double>(sampled); }
    double match_rate() const
    {
        return sampled == 0 ? 1.0 : static_cast<double>(output_match) / static_cast<double>(sampled);
    }
};

struct AuditReport {
    RunConfig cfg;
    double sample_rate = 1.0;
    std::uint64_t decisions = 0;
    KindAudit early_skip, diff_reuse, full_compute;

    double agreement() const
    {
        const auto n = early_skip.sampled + diff_reuse.sampled + full_compute.sampled;
        const auto a = early_skip.agree + diff_reuse.agree + full_compute.agree;
        return n == 0 ? 1.0 : static_cast<double>(a) / static_cast<double>(n);
    }
};

// Re-derives each sampled decision from the complete trees: the root-level
// distance to the same reference must give the same kind. Skipped and reused
// items are also recomputed exactly and compared with the result they took.
inline AuditReport audit_roots(const RunConfig& cfg_in, double sample_rate)
{
    if (!(sample_rate > 0.0 && sample_rate <= 1.0)) throw ConfigError("sample rate must lie in (0, 1]");
    RunConfig cfg = cfg_in;
    cfg.sim.features.mips = true;
    AuditReport rep;
    rep.cfg = cfg;
    rep.sample_rate = sample_rate;

    const auto trace = generate_trace(cfg.trace);
    const auto model = ToyModel::random(cfg.sim.dims, cfg.sim.seed);
    Simulator sim(model, cfg.sim);
    const auto run = sim.run(trace.tokens);
    rep.decisions = run.decisions.size();

    std::vector<Vec> xs;
    for (const auto& t : trace.tokens) xs.emplace_back(t.begin(), t.end());
    std::vector<std::optional<mips::Tree>> trees(xs.size());
    auto tree = [&](int t) -> const mips::Tree& {
        auto& slot = trees[static_cast<std::size_t>(t)];
        if (!slot) slot = mips::build_tree(sim.hasher(), xs[static_cast<std::size_t>(t)]);
        return *slot;
    };
    auto site = [&](int s, int t) {
        return s < 0 ? sim.projection_site(xs[static_cast<std::size_t>(t)])
                     : sim.expert_site(s, xs[static_cast<std::size_t>(t)]);
    };

    Rng rng(derive_seed(cfg.sim.seed, 0x6175646974ull));
    for (const auto& rec : run.decisions) {
        if (rng.uniform01() >= sample_rate) continue;
        const auto kind = rec.decision.kind;
        if (kind == mips::Kind::FullCompute) {
            ++rep.full_compute.sampled;
            ++rep.full_compute.agree;
            ++rep.full_compute.output_match;
            continue;
        }
        auto& ka = kind == mips::Kind::EarlySkip ? rep.early_skip : rep.diff_reuse;
        ++ka.sampled;
        if (mips::root_decision(tree(rec.token), tree(rec.decision.ref), cfg.sim.mips.th) == kind) ++ka.agree;
        if (site(rec.site, rec.token) == site(rec.site, rec.decision.result)) ++ka.output_match;
    }
    return rep;
}

inline nlohmann::ordered_json audit_json(const AuditReport& a)
{
    auto kind = [](const KindAudit& k) {
        return nlohmann::ordered_json{{"sampled", k.sampled},
                                      {"agree", k.agree},
                                      {"agreement", k.agreement()},
                                      {"output_match", k.output_match},
                                      {"output_match_rate", k.match_rate()}};
    };
    nlohmann::ordered_json j;
    j["config"] = embedded_config(a.cfg);
    j["config_hash"] = config_hash(a.cfg);
    j["seed"] = a.cfg.sim.seed;
    j["sample_rate"] = a.sample_rate;
    j["decisions"] = a.decisions;
    j["sampled"] = a.early_skip.sampled + a.diff_reuse.sampled + a.full_compute.sampled;
    j["kinds"] = {{"early_skip", kind(a.early_skip)},
                  {"diff_reuse", kind(a.diff_reuse)},
                  {"full_compute", kind(a.full_compute)}};
    j["agreement"] = a.agreement();
    return j;
}

} // namespace dspe
