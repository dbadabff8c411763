#pragma once

// Versioned JSON run configuration. Every key is optional; missing keys take
// the defaults below and unknown keys are rejected. Precedence, lowest first:
// built-in defaults, the config file, command-line flags.

#include "dspe/arch.hpp"
#include "dspe/booth.hpp"
#include "dspe/workload.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>

namespace dspe {

inline constexpr int kConfigVersion = 1;

struct RunConfig {
    SimConfig sim;
    TraceSpec trace;
    std::string bn_model_path;
    std::string output_dir = ".";

    // Thresholds under which every skip and reuse is exact.
    void apply_exact_preset()
    {
        sim.mips.th = mips::Thresholds{0, 0, true};
        sim.mblm.t_match = 0;
        sim.mblm.r_zero_wgt = 0;
        sim.mblm.r_zero_act = 0;
    }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed)
{
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!ok.count(it.key())) throw ConfigError("unknown key '" + (where.empty() ? "" : where + ".") + it.key() + "'");
    }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where)
{
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("bad value for '" + where + "." + key + "'");
    }
}

inline nlohmann::json section(const nlohmann::json& j, const char* key)
{
    return j.contains(key) ? j.at(key) : nlohmann::json::object();
}

} // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j, const std::string& base_dir = ".")
{
    using detail::read;
    using detail::section;
    detail::check_keys(j, "", {"version", "seed", "trace", "model", "arch", "costs", "cycles", "features", "mips",
                               "mblm", "output_dir"});
    RunConfig c;
    int version = kConfigVersion;
    read(j, "version", version, "");
    if (version != kConfigVersion) throw ConfigError("unsupported config version " + std::to_string(version));
    read(j, "seed", c.sim.seed, "");
    read(j, "output_dir", c.output_dir, "");

    const auto tr = section(j, "trace");
    detail::check_keys(tr, "trace", {"length", "rho", "duplicate_rate", "near_zero_rate"});
    read(tr, "length", c.trace.length, "trace");
    read(tr, "rho", c.trace.rho, "trace");
    read(tr, "duplicate_rate", c.trace.duplicate_rate, "trace");
    read(tr, "near_zero_rate", c.trace.near_zero_rate, "trace");

    const auto md = section(j, "model");
    detail::check_keys(md, "model", {"d_model", "heads", "d_k", "experts", "top_k", "d_ff"});
    read(md, "d_model", c.sim.dims.d_model, "model");
    read(md, "heads", c.sim.dims.heads, "model");
    read(md, "d_k", c.sim.dims.d_k, "model");
    read(md, "experts", c.sim.dims.experts, "model");
    read(md, "top_k", c.sim.dims.top_k, "model");
    read(md, "d_ff", c.sim.dims.d_ff, "model");

    auto& a = c.sim.arch;
    const auto ar = section(j, "arch");
    detail::check_keys(ar, "arch", {"cores", "pes_per_core", "parameter_buffer_bytes", "weight_buffer_bytes",
                                    "qk_sram_bytes", "v_sram_bytes", "input_buffer_bytes", "output_buffer_bytes"});
    read(ar, "cores", a.cores, "arch");
    read(ar, "pes_per_core", a.pes_per_core, "arch");
    read(ar, "parameter_buffer_bytes", a.parameter_buffer, "arch");
    read(ar, "weight_buffer_bytes", a.weight_buffer, "arch");
    read(ar, "qk_sram_bytes", a.qk_sram, "arch");
    read(ar, "v_sram_bytes", a.v_sram, "arch");
    read(ar, "input_buffer_bytes", a.input_buffer, "arch");
    read(ar, "output_buffer_bytes", a.output_buffer, "arch");

    const auto co = section(j, "costs");
    detail::check_keys(co, "costs", {"dram_access", "sram_access", "mac", "digit_flip", "pp_row", "pe_cell"});
    read(co, "dram_access", a.costs.dram_access, "costs");
    read(co, "sram_access", a.costs.sram_access, "costs");
    read(co, "mac", a.costs.mac, "costs");
    read(co, "digit_flip", a.costs.digit_flip, "costs");
    read(co, "pp_row", a.costs.pp_row, "costs");
    read(co, "pe_cell", a.costs.pe_cell, "costs");

    const auto cy = section(j, "cycles");
    detail::check_keys(cy, "cycles", {"dram_access", "sram_access"});
    read(cy, "dram_access", a.cycles.dram_access, "cycles");
    read(cy, "sram_access", a.cycles.sram_access, "cycles");

    const auto fe = section(j, "features");
    detail::check_keys(fe, "features", {"mips", "mblm", "dappm"});
    read(fe, "mips", c.sim.features.mips, "features");
    read(fe, "mblm", c.sim.features.mblm, "features");
    read(fe, "dappm", c.sim.features.dappm, "features");

    auto& m = c.sim.mips;
    const auto mi = section(j, "mips");
    detail::check_keys(mi, "mips", {"t_zero", "s_th", "integrity_gate", "d_low", "leaves", "lut_capacity",
                                    "references", "window"});
    read(mi, "t_zero", m.th.t_zero, "mips");
    read(mi, "s_th", m.th.s_th, "mips");
    read(mi, "integrity_gate", m.th.integrity_gate, "mips");
    read(mi, "d_low", m.d_low, "mips");
    read(mi, "leaves", m.leaves, "mips");
    read(mi, "lut_capacity", m.lut_capacity, "mips");
    read(mi, "references", m.references, "mips");
    read(mi, "window", m.window, "mips");

    auto& b = c.sim.mblm;
    const auto mb = section(j, "mblm");
    detail::check_keys(mb, "mblm", {"r_zero_wgt", "r_zero_act", "t_match", "score_threshold", "lut_capacity",
                                    "bn_model"});
    read(mb, "r_zero_wgt", b.r_zero_wgt, "mblm");
    read(mb, "r_zero_act", b.r_zero_act, "mblm");
    read(mb, "t_match", b.t_match, "mblm");
    read(mb, "score_threshold", b.score_threshold, "mblm");
    read(mb, "lut_capacity", b.lut_capacity, "mblm");
    if (mb.contains("bn_model") && !mb.at("bn_model").is_null()) read(mb, "bn_model", c.bn_model_path, "mblm");
    b.flip_weight = a.costs.digit_flip;
    b.row_weight = a.costs.pp_row;

    if (m.th.t_zero < 0 || m.th.s_th < 0 || m.th.t_zero > 32 || m.th.s_th > 32) {
        throw ConfigError("mips thresholds must lie in [0, 32]");
    }
    if (m.references < 1) throw ConfigError("mips.references must be >= 1");
    if (b.r_zero_wgt < 0 || b.r_zero_act < 0 || b.t_match < 0 || b.t_match > 8) {
        throw ConfigError("mblm thresholds out of range");
    }
    if (!c.bn_model_path.empty()) {
        std::string path = c.bn_model_path;
        if (!path.empty() && path.front() != '/') path = base_dir + "/" + path;
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot read BN model " + path);
        try {
            b.bn = booth::BNModel::from_json(nlohmann::json::parse(f));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("BN model: ") + e.what());
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("BN model: ") + e.what());
        }
    }

    c.trace.seed = c.sim.seed;
    c.trace.d_model = c.sim.dims.d_model;
    c.trace.validate();
    c.sim.dims.validate();
    a.validate();
    if (m.d_low < 1 || m.leaves < 1 || m.d_low % m.leaves != 0) {
        throw ConfigError("mips.d_low must be a positive multiple of mips.leaves");
    }
    return c;
}

inline nlohmann::ordered_json config_to_json(const RunConfig& c)
{
    const auto& s = c.sim;
    const auto& a = s.arch;
    nlohmann::ordered_json j;
    j["version"] = kConfigVersion;
    j["seed"] = s.seed;
    j["trace"] = {{"length", c.trace.length},
                  {"rho", c.trace.rho},
                  {"duplicate_rate", c.trace.duplicate_rate},
                  {"near_zero_rate", c.trace.near_zero_rate}};
    j["model"] = {{"d_model", s.dims.d_model}, {"heads", s.dims.heads},   {"d_k", s.dims.d_k},
                  {"experts", s.dims.experts}, {"top_k", s.dims.top_k},   {"d_ff", s.dims.d_ff}};
    j["arch"] = {{"cores", a.cores},
                 {"pes_per_core", a.pes_per_core},
                 {"parameter_buffer_bytes", a.parameter_buffer},
                 {"weight_buffer_bytes", a.weight_buffer},
                 {"qk_sram_bytes", a.qk_sram},
                 {"v_sram_bytes", a.v_sram},
                 {"input_buffer_bytes", a.input_buffer},
                 {"output_buffer_bytes", a.output_buffer}};
    j["costs"] = {{"dram_access", a.costs.dram_access}, {"sram_access", a.costs.sram_access},
                  {"mac", a.costs.mac},                 {"digit_flip", a.costs.digit_flip},
                  {"pp_row", a.costs.pp_row},           {"pe_cell", a.costs.pe_cell}};
    j["cycles"] = {{"dram_access", a.cycles.dram_access}, {"sram_access", a.cycles.sram_access}};
    j["features"] = {{"mips", s.features.mips}, {"mblm", s.features.mblm}, {"dappm", s.features.dappm}};
    j["mips"] = {{"t_zero", s.mips.th.t_zero},
                 {"s_th", s.mips.th.s_th},
                 {"integrity_gate", s.mips.th.integrity_gate},
                 {"d_low", s.mips.d_low},
                 {"leaves", s.mips.leaves},
                 {"lut_capacity", s.mips.lut_capacity},
                 {"references", s.mips.references},
                 {"window", s.mips.window}};
    nlohmann::ordered_json mb = {{"r_zero_wgt", s.mblm.r_zero_wgt},
                                 {"r_zero_act", s.mblm.r_zero_act},
                                 {"t_match", s.mblm.t_match},
                                 {"score_threshold", s.mblm.score_threshold},
                                 {"lut_capacity", s.mblm.lut_capacity}};
    mb["bn_model"] = c.bn_model_path.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(c.bn_model_path);
    j["mblm"] = mb;
    j["output_dir"] = c.output_dir;
    return j;
}

// FNV-1a 64 of the canonical resolved config, output location excluded.
inline std::string config_hash(const RunConfig& c)
{
    auto j = config_to_json(c);
    j.erase("output_dir");
    const auto s = j.dump();
    return hex64(fnv1a64(s.data(), s.size()));
}

inline RunConfig load_config(const std::string& path)
{
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    const auto slash = path.find_last_of('/');
    return config_from_json(j, slash == std::string::npos ? "." : path.substr(0, slash));
}

// Sets a dotted key ("trace.duplicate_rate") in a config document.
inline void set_path(nlohmann::json& j, const std::string& dotted, const nlohmann::json& value)
{
    nlohmann::json* cur = &j;
    std::stringstream ss(dotted);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) throw ConfigError("empty override key");
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!cur->contains(parts[i])) (*cur)[parts[i]] = nlohmann::json::object();
        cur = &(*cur)[parts[i]];
    }
    (*cur)[parts.back()] = value;
}

} // namespace dspe
