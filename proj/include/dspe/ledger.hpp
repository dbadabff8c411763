#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace dspe {

// Per-event energy weights. modeled_energy is the dot product of these with the
// ledger counters.
struct CostWeights {
    double dram_access = 200.0;
    double sram_access = 5.0;
    double mac = 1.0;
    double digit_flip = 0.1;
    double pp_row = 0.5;
    double pe_cell = 0.05;
};

// Event-count to cycle conversion. Compute is spread over every PE of every core.
struct CycleWeights {
    double dram_access = 0.25;
    double sram_access = 1.0 / 16.0;
    int parallel_pes = 256;
};

struct CostLedger {
    std::uint64_t dram_reads = 0;
    std::uint64_t dram_writes = 0;
    std::uint64_t sram_reads = 0;
    std::uint64_t sram_writes = 0;
    std::uint64_t macs = 0;            // executed model multiplies
    std::uint64_t overhead_macs = 0;   // projection and hashing work
    std::uint64_t booth_digit_flips = 0;
    std::uint64_t booth_encodings = 0;
    std::uint64_t pp_rows = 0;
    std::uint64_t pe_cell_activations = 0;
    std::uint64_t ops_demanded = 0;
    std::uint64_t ops_skipped = 0;
    std::uint64_t ops_reused = 0;
    std::uint64_t lut_replays = 0;
    std::uint64_t approx_events = 0;
    std::uint64_t folded_bits_saved = 0;
    std::array<std::uint64_t, 3> dappm_modes{};
    std::vector<std::uint64_t> core_macs;
    double approx_abs_error = 0.0;
    double modeled_cycles = 0.0;
    double modeled_energy = 0.0;

    std::uint64_t dram_accesses() const { return dram_reads + dram_writes; }
    std::uint64_t sram_accesses() const { return sram_reads + sram_writes; }

    void charge_core(std::size_t core, std::uint64_t n)
    {
        if (core_macs.size() <= core) core_macs.resize(core + 1, 0);
        core_macs[core] += n;
    }

    void finalize(const CostWeights& w, const CycleWeights& c)
    {
        modeled_energy = w.dram_access * static_cast<double>(dram_accesses())
                       + w.sram_access * static_cast<double>(sram_accesses())
                       + w.mac * static_cast<double>(macs + overhead_macs)
                       + w.digit_flip * static_cast<double>(booth_digit_flips)
                       + w.pp_row * static_cast<double>(pp_rows)
                       + w.pe_cell * static_cast<double>(pe_cell_activations);
        modeled_cycles = static_cast<double>(macs + overhead_macs) / c.parallel_pes
                       + c.dram_access * static_cast<double>(dram_accesses())
                       + c.sram_access * static_cast<double>(sram_accesses());
    }

    double mean_pe_cells() const
    {
        const auto n = dappm_modes[0] + dappm_modes[1] + dappm_modes[2];
        if (n == 0) return 0.0;
        return (16.0 * dappm_modes[0] + 9.0 * dappm_modes[1] + 4.0 * dappm_modes[2])
             / static_cast<double>(n);
    }

    static std::vector<std::string> counter_names()
    {
        return {"dram_reads", "dram_writes", "sram_reads", "sram_writes", "macs",
                "overhead_macs", "booth_digit_flips", "booth_encodings", "pp_rows",
                "pe_cell_activations", "ops_demanded", "ops_skipped", "ops_reused",
                "lut_replays", "approx_events", "folded_bits_saved", "dappm_mode0",
                "dappm_mode1", "dappm_mode2", "approx_abs_error", "modeled_cycles",
                "modeled_energy"};
    }

    nlohmann::ordered_json to_json() const
    {
        nlohmann::ordered_json j;
        j["dram_reads"] = dram_reads;
        j["dram_writes"] = dram_writes;
        j["sram_reads"] = sram_reads;
        j["sram_writes"] = sram_writes;
        j["macs"] = macs;
        j["overhead_macs"] = overhead_macs;
        j["booth_digit_flips"] = booth_digit_flips;
        j["booth_encodings"] = booth_encodings;
        j["pp_rows"] = pp_rows;
        j["pe_cell_activations"] = pe_cell_activations;
        j["ops_demanded"] = ops_demanded;
        j["ops_skipped"] = ops_skipped;
        j["ops_reused"] = ops_reused;
        j["lut_replays"] = lut_replays;
        j["approx_events"] = approx_events;
        j["folded_bits_saved"] = folded_bits_saved;
        j["dappm_mode0"] = dappm_modes[0];
        j["dappm_mode1"] = dappm_modes[1];
        j["dappm_mode2"] = dappm_modes[2];
        j["approx_abs_error"] = approx_abs_error;
        j["modeled_cycles"] = modeled_cycles;
        j["modeled_energy"] = modeled_energy;
        j["core_macs"] = core_macs;
        return j;
    }
};

} // namespace dspe
