#pragma once

// Event-count model of the accelerator: four attention cores of 64 PEs, a
// parameter buffer for the attention projections and gate, an LRU weight buffer
// for expert tiles, Q/K/V SRAMs, and DRAM behind everything.
//
// A run is staged. Stage 1 decides every token's projection site (q, k, v and
// gate logits) in arrival order and executes the survivors in 8-lane batches.
// Stage 2 runs causal attention per token. Stage 3 applies W^O. Stage 4 decides
// each routed (token, expert) site, queues survivors per expert and fires an
// expert whenever its queue holds a full batch. Batches are packed in sorter
// order when MIPS is on, else in arrival order; outputs are always indexed by
// arrival position.

#include "dspe/booth.hpp"
#include "dspe/ledger.hpp"
#include "dspe/merkle.hpp"
#include "dspe/model.hpp"
#include "dspe/posit.hpp"
#include "dspe/workload.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <deque>
#include <list>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace dspe {

struct ArchConfig {
    int cores = 4;
    int pes_per_core = 64;
    std::size_t parameter_buffer = 24 * 1024;
    std::size_t weight_buffer = 48 * 1024;
    std::size_t qk_sram = 48 * 1024; // each of two; K lives in the second
    std::size_t v_sram = 48 * 1024;
    std::size_t input_buffer = 8 * 1024;
    std::size_t output_buffer = 8 * 1024;
    CostWeights costs;
    CycleWeights cycles;

    void validate() const
    {
        if (cores < 1 || pes_per_core < 1) throw ConfigError("cores and pes_per_core must be positive");
        if (parameter_buffer == 0 || weight_buffer == 0 || qk_sram == 0 || v_sram == 0 || input_buffer == 0
            || output_buffer == 0) {
            throw ConfigError("buffer capacities must be positive");
        }
    }
};

struct Features {
    bool mips = false;
    bool mblm = false;
    bool dappm = false;
};

struct MipsConfig {
    mips::Thresholds th;
    int d_low = 32;
    int leaves = 8;
    std::size_t lut_capacity = 256;
    std::size_t references = 4;
    std::size_t window = 256;
    bool decisions = true; // false leaves only the sorter active
};

struct SimConfig {
    std::uint64_t seed = 1;
    ModelDims dims;
    ArchConfig arch;
    Features features;
    MipsConfig mips;
    booth::MblmConfig mblm;
    bool record_batches = false;
};

// ---------------------------------------------------------------------------
// Buffers

class TileBuffer {
public:
    explicit TileBuffer(std::size_t capacity) : capacity_(capacity) {}

    // True on hit. Tiles larger than the buffer stream through without residency.
    bool access(std::uint64_t key, std::size_t bytes)
    {
        if (auto it = index_.find(key); it != index_.end()) {
            order_.splice(order_.begin(), order_, it->second);
            return true;
        }
        if (bytes > capacity_) return false;
        while (used_ + bytes > capacity_) {
            used_ -= order_.back().second;
            index_.erase(order_.back().first);
            order_.pop_back();
        }
        order_.emplace_front(key, bytes);
        index_[key] = order_.begin();
        used_ += bytes;
        return false;
    }

    std::size_t used() const { return used_; }

private:
    std::size_t capacity_;
    std::size_t used_ = 0;
    std::list<std::pair<std::uint64_t, std::size_t>> order_;
    std::unordered_map<std::uint64_t, std::list<std::pair<std::uint64_t, std::size_t>>::iterator> index_;
};

// ---------------------------------------------------------------------------
// Numeric backends

enum class Backend { Float, Int8, Posit };

inline const char* to_string(Backend b)
{
    switch (b) {
    case Backend::Float: return "float";
    case Backend::Int8: return "int8";
    default: return "posit8";
    }
}

inline Backend backend_for(const Features& f)
{
    if (f.dappm) return Backend::Posit;
    if (f.mblm) return Backend::Int8;
    return Backend::Float;
}

// A vector in operand form. code is the 8-bit pattern the multiplier sees: the
// posit bits, or the symmetric int8 quantization (which the float backend
// keeps for Booth accounting only).
struct Coded {
    std::vector<std::int8_t> code;
    std::vector<double> value;
    double scale = 1.0;
};

inline double int8_scale(const double* v, std::size_t n)
{
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::fabs(v[i]));
    return m > 0.0 ? m / 127.0 : 1.0;
}

inline std::int8_t quantize(double x, double scale)
{
    return static_cast<std::int8_t>(std::clamp(std::nearbyint(x / scale), -127.0, 127.0));
}

inline Coded encode_values(const double* v, std::size_t n, Backend b)
{
    Coded c;
    c.code.resize(n);
    c.value.assign(v, v + n);
    c.scale = int8_scale(v, n);
    if (b == Backend::Posit) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto w = posit::encode(v[i]);
            c.code[i] = static_cast<std::int8_t>(w.bits);
            c.value[i] = posit::value_table()[w.bits];
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) c.code[i] = quantize(v[i], c.scale);
    }
    return c;
}

inline Coded encode_vec(const Vec& v, Backend b) { return encode_values(v.data(), v.size(), b); }

// Raw product as the multiplier produces it: integer for int8, rounded posit
// value for posit8, exact double for float.
inline double raw_product(Backend b, std::int8_t wc, double wv, std::int8_t ac, double av)
{
    switch (b) {
    case Backend::Float: return wv * av;
    case Backend::Int8: return static_cast<double>(static_cast<int>(wc) * static_cast<int>(ac));
    default:
        return posit::value_table()[posit::MulTable::instance().value[static_cast<std::uint8_t>(wc) * 256u
                                                                    + static_cast<std::uint8_t>(ac)]];
    }
}

// Adds one product to an accumulator, applying the int8 scale pair.
inline void accumulate(Backend b, double& acc, double raw, double scale_pair)
{
    if (b == Backend::Int8) {
        acc += raw * scale_pair;
    } else {
        acc += raw;
    }
}

inline double scalar_product(Backend b, const Coded& x, std::size_t i, const Coded& y, std::size_t j)
{
    const double raw = raw_product(b, x.code[i], x.value[i], y.code[j], y.value[j]);
    return b == Backend::Int8 ? raw * (x.scale * y.scale) : raw;
}

struct CodedMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::int8_t> code;
    std::vector<double> value;
    double scale = 1.0;
    std::uint32_t id = 0;

    std::int8_t c(std::size_t r, std::size_t k) const { return code[r * cols + k]; }
    double v(std::size_t r, std::size_t k) const { return value[r * cols + k]; }
};

inline CodedMatrix encode_matrix(const Matrix& m, Backend b, std::uint32_t id)
{
    const auto coded = encode_values(m.data.data(), m.data.size(), b);
    return {m.rows, m.cols, coded.code, coded.value, coded.scale, id};
}

inline Matrix transpose(const Matrix& m)
{
    Matrix t(m.cols, m.rows);
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) t(c, r) = m(r, c);
    }
    return t;
}

// ---------------------------------------------------------------------------
// Run records

struct DecisionRecord {
    int token = 0;
    int site = -1; // -1 = projection site, else expert id
    mips::Decision decision;
};

struct BatchRecord {
    std::string matrix;
    int batch = 0;
    int column = 0;
    booth::Radix path = booth::Radix::R4;
    std::vector<int> order; // lane order of the chosen plan
    int flips = 0;
    int replays = 0;
    int skips = 0;
};

struct KindCounts {
    std::uint64_t early_skip = 0;
    std::uint64_t diff_reuse = 0;
    std::uint64_t full_compute = 0;

    void add(mips::Kind k)
    {
        if (k == mips::Kind::EarlySkip) ++early_skip;
        else if (k == mips::Kind::DiffReuse) ++diff_reuse;
        else ++full_compute;
    }
};

struct RunResult {
    std::vector<Vec> outputs;
    CostLedger ledger;
    KindCounts projection_decisions;
    KindCounts expert_decisions;
    std::vector<DecisionRecord> decisions;
    std::vector<BatchRecord> batches;
    std::vector<int> processing_order;
    std::uint64_t attention_reused = 0;
    Backend backend = Backend::Float;

    std::uint64_t early_skips() const { return projection_decisions.early_skip + expert_decisions.early_skip; }
};

// ---------------------------------------------------------------------------
// Simulator

class Simulator {
public:
    Simulator(const ToyModel& model, const SimConfig& cfg)
        : model_(model), cfg_(cfg), backend_(backend_for(cfg.features)),
          hasher_(mips::TreeShape{model.dims.d_model, cfg.mips.d_low, cfg.mips.leaves}, cfg.seed),
          param_buf_(cfg.arch.parameter_buffer), weight_buf_(cfg.arch.weight_buffer)
    {
        cfg.arch.validate();
        model.dims.validate();
        std::uint32_t id = 0;
        wq_ = encode_matrix(model.wq, backend_, id++);
        wk_ = encode_matrix(model.wk, backend_, id++);
        wv_ = encode_matrix(model.wv, backend_, id++);
        gate_ = encode_matrix(model.gate, backend_, id++);
        wo_ = encode_matrix(transpose(model.wo), backend_, id++);
        for (const auto& e : model.experts) {
            w1_.push_back(encode_matrix(e.w1, backend_, id++));
            w2_.push_back(encode_matrix(e.w2, backend_, id++));
        }
        luts_.resize(id, booth::BoothLut(cfg.mblm.lut_capacity));
        booth_last_.assign(id, std::nullopt);
    }

    const mips::Hasher& hasher() const { return hasher_; }
    Backend backend() const { return backend_; }

    RunResult run(const std::vector<std::vector<float>>& tokens);

    // Direct, unbatched evaluation of one site for audit recomputation. Uses the
    // same arithmetic as the batched path.
    Vec projection_site(const Vec& x) const;
    Vec expert_site(int e, const Vec& x) const;

private:
    struct Lane {
        const Coded* act;
        Vec* out;
    };

    void charge_matvec_memory(const CodedMatrix& w, TileBuffer& buf, std::size_t lanes);
    void batched_matvec(const CodedMatrix& w, const std::string& name, std::vector<Lane>& lanes, int batch_id,
                        RunResult& rr);
    void charge_plain(std::int8_t wc, std::int8_t ac);
    Vec direct_matvec(const CodedMatrix& w, const Coded& x) const;

    const ToyModel& model_;
    SimConfig cfg_;
    Backend backend_;
    mips::Hasher hasher_;
    TileBuffer param_buf_;
    TileBuffer weight_buf_;
    CodedMatrix wq_, wk_, wv_, gate_, wo_;
    std::vector<CodedMatrix> w1_, w2_;
    std::vector<booth::BoothLut> luts_;
    std::vector<std::optional<std::uint16_t>> booth_last_;
    CostLedger ledger_;
};

// Booth and PE accounting for one multiply executed without the MBLM pipeline:
// radix-4 encoding, four partial-product rows, and the full array unless the
// DA-Posit modes are on.
inline void Simulator::charge_plain(std::int8_t wc, std::int8_t ac)
{
    ++ledger_.macs;
    ++ledger_.booth_encodings;
    ledger_.pp_rows += 4;
    if (backend_ == Backend::Posit) {
        const int m = posit::MulTable::instance().mode[static_cast<std::uint8_t>(wc) * 256u + static_cast<std::uint8_t>(ac)];
        ++ledger_.dappm_modes[static_cast<std::size_t>(m)];
        ledger_.pe_cell_activations += static_cast<std::uint64_t>(posit::pe_cells_for_mode(m));
        ledger_.folded_bits_saved += static_cast<std::uint64_t>(m == 2 ? 3 : m);
    } else {
        ledger_.pe_cell_activations += 16;
    }
}

inline void Simulator::charge_matvec_memory(const CodedMatrix& w, TileBuffer& buf, std::size_t lanes)
{
    for (std::size_t r = 0; r < w.rows; ++r) {
        if (!buf.access((static_cast<std::uint64_t>(w.id) << 32) | r, w.cols)) {
            ledger_.dram_reads += w.cols;
            ledger_.sram_writes += w.cols;
        }
    }
    ledger_.sram_reads += w.rows * w.cols;  // each weight once per batch
    ledger_.sram_reads += lanes * w.cols;   // activations
    ledger_.sram_writes += lanes * w.rows;  // results
}

// y_l = W a_l for up to eight lanes sharing W. Accumulation per (lane, row) runs
// over columns in ascending order, so results do not depend on lane order.
inline void Simulator::batched_matvec(const CodedMatrix& w, const std::string& name, std::vector<Lane>& lanes,
                                      int batch_id, RunResult& rr)
{
    const std::size_t n = lanes.size();
    const bool is_expert = w.id >= wo_.id + 1;
    charge_matvec_memory(w, is_expert ? weight_buf_ : param_buf_, n);
    std::vector<std::vector<double>> acc(n, std::vector<double>(w.rows, 0.0));
    auto& lut = luts_[w.id];
    const auto cores = static_cast<std::size_t>(cfg_.arch.cores);

    std::array<std::int8_t, booth::kLanes> acts{};
    std::array<double, booth::kLanes> products{};
    std::uint8_t present = 0;
    for (std::size_t l = 0; l < n; ++l) present |= static_cast<std::uint8_t>(1u << l);

    for (std::size_t c = 0; c < w.cols; ++c) {
        acts.fill(0);
        for (std::size_t l = 0; l < n; ++l) acts[l] = lanes[l].act->code[c];
        if (cfg_.features.mblm) {
            const auto bp = booth::plan_batch(acts, cfg_.mblm, present);
            int replays = 0, skips = 0, flips = 0;
            for (std::size_t r = 0; r < w.rows; ++r) {
                const std::int8_t wc = w.c(r, c);
                const auto before = ledger_.macs;
                const auto st = booth::execute_plan(
                    bp, wc, acts, cfg_.mblm, lut, ledger_, products,
                    [&](std::int8_t a, std::int8_t b) { return raw_product(backend_, a, 0.0, b, 0.0); },
                    [&](std::int8_t a, std::int8_t b) {
                        if (backend_ == Backend::Posit) {
                            const int m = posit::MulTable::instance().mode[static_cast<std::uint8_t>(a) * 256u
                                                                           + static_cast<std::uint8_t>(b)];
                            ++ledger_.dappm_modes[static_cast<std::size_t>(m)];
                            ledger_.pe_cell_activations += static_cast<std::uint64_t>(posit::pe_cells_for_mode(m));
                            ledger_.folded_bits_saved += static_cast<std::uint64_t>(m == 2 ? 3 : m);
                        } else {
                            ledger_.pe_cell_activations += 16;
                        }
                    });
                ledger_.charge_core(r % cores, ledger_.macs - before);
                replays += st.replayed;
                skips += st.skipped;
                flips += st.flips;
                for (std::size_t l = 0; l < n; ++l) {
                    accumulate(backend_, acc[l][r], products[l], w.scale * lanes[l].act->scale);
                }
            }
            if (cfg_.record_batches) {
                rr.batches.push_back({name, batch_id, static_cast<int>(c), bp.plan.radix, bp.plan.order, flips,
                                      replays, skips});
            }
        } else {
            // Arrival order, every lane executed.
            std::array<std::uint16_t, booth::kLanes> ctrl{};
            int lane_flips = 0;
            for (std::size_t l = 0; l < n; ++l) {
                ctrl[l] = booth::control_word(booth::encode(acts[l], booth::Radix::R4));
                if (l > 0) lane_flips += std::popcount(static_cast<unsigned>(ctrl[l - 1] ^ ctrl[l]));
            }
            for (std::size_t r = 0; r < w.rows; ++r) {
                const std::int8_t wc = w.c(r, c);
                const double wv = w.v(r, c);
                ledger_.ops_demanded += n;
                for (std::size_t l = 0; l < n; ++l) {
                    const double raw = raw_product(backend_, wc, wv, acts[l], lanes[l].act->value[c]);
                    accumulate(backend_, acc[l][r], raw, w.scale * lanes[l].act->scale);
                    charge_plain(wc, acts[l]);
                }
                ledger_.booth_digit_flips += static_cast<std::uint64_t>(lane_flips);
                ledger_.charge_core(r % cores, n);
            }
        }
    }
    for (std::size_t l = 0; l < n; ++l) *lanes[l].out = std::move(acc[l]);
}

inline Vec Simulator::direct_matvec(const CodedMatrix& w, const Coded& x) const
{
    Vec y(w.rows, 0.0);
    for (std::size_t r = 0; r < w.rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < w.cols; ++c) {
            accumulate(backend_, acc, raw_product(backend_, w.c(r, c), w.v(r, c), x.code[c], x.value[c]),
                       w.scale * x.scale);
        }
        y[r] = acc;
    }
    return y;
}

inline Vec Simulator::projection_site(const Vec& x) const
{
    const auto cx = encode_vec(x, backend_);
    Vec out;
    for (const auto* m : {&wq_, &wk_, &wv_, &gate_}) {
        const auto part = direct_matvec(*m, cx);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

inline Vec Simulator::expert_site(int e, const Vec& x) const
{
    const auto cx = encode_vec(x, backend_);
    const auto hidden = relu(direct_matvec(w1_[static_cast<std::size_t>(e)], cx));
    return direct_matvec(w2_[static_cast<std::size_t>(e)], encode_vec(hidden, backend_));
}

inline RunResult Simulator::run(const std::vector<std::vector<float>>& tokens)
{
    ledger_ = CostLedger{};
    ledger_.core_macs.assign(static_cast<std::size_t>(cfg_.arch.cores), 0);
    RunResult rr;
    rr.backend = backend_;
    const auto& dims = model_.dims;
    const auto d = static_cast<std::size_t>(dims.d_model);
    const auto dk = static_cast<std::size_t>(dims.d_k);
    const auto heads = static_cast<std::size_t>(dims.heads);
    const auto n_exp = static_cast<std::size_t>(dims.experts);
    const auto T = tokens.size();
    const bool use_mips = cfg_.features.mips;
    const bool decide_on = use_mips && cfg_.mips.decisions;
    const std::uint64_t proj_ops = 3 * d * d + n_exp * d;
    const std::uint64_t expert_ops = 2 * d * static_cast<std::uint64_t>(dims.d_ff);

    std::vector<Vec> xs(T);
    std::vector<Coded> cx(T);
    for (std::size_t t = 0; t < T; ++t) {
        if (tokens[t].size() != d) throw ConfigError("token width does not match d_model");
        xs[t].assign(tokens[t].begin(), tokens[t].end());
        cx[t] = encode_vec(xs[t], backend_);
        ledger_.dram_reads += d;  // input fetch
        ledger_.sram_writes += d; // input buffer fill
    }

    // ---- Stage 1: projection site decisions.
    mips::SortedWindow window(cfg_.mips.window);
    std::vector<mips::Tree> trees(T);
    std::vector<int> neighbour(T, -1);
    std::vector<int> proj_src(T, -1);
    std::deque<int> proj_ring;
    mips::HistoryLut proj_lut(hasher_.shape().levels(), cfg_.mips.lut_capacity);
    std::vector<int> proj_survivors;

    auto gather_refs = [&](const std::deque<int>& ring, int t, auto has_result) {
        std::vector<mips::Reference> refs;
        for (int r : ring) refs.push_back({r, &trees[static_cast<std::size_t>(r)]});
        const int nb = neighbour[static_cast<std::size_t>(t)];
        if (nb >= 0 && has_result(nb) && std::find(ring.begin(), ring.end(), nb) == ring.end()) {
            refs.push_back({nb, &trees[static_cast<std::size_t>(nb)]});
        }
        return refs;
    };

    for (std::size_t t = 0; t < T; ++t) {
        const int id = static_cast<int>(t);
        if (use_mips) {
            const auto ins = window.insert(id, xs[t]);
            ledger_.overhead_macs += ins.computed * d;
            neighbour[t] = ins.neighbour;
        }
        if (!decide_on) {
            proj_src[t] = id;
            proj_survivors.push_back(id);
            continue;
        }
        trees[t] = mips::start_tree(hasher_, xs[t], &ledger_);
        const auto refs = gather_refs(proj_ring, id, [](int) { return true; });
        const auto dec = mips::decide(hasher_, trees[t], refs, proj_lut, cfg_.mips.th, &ledger_);
        rr.decisions.push_back({id, -1, dec});
        rr.projection_decisions.add(dec.kind);
        if (dec.kind == mips::Kind::FullCompute) {
            proj_src[t] = id;
            proj_survivors.push_back(id);
            mips::register_result(trees[t], refs, proj_lut, cfg_.mips.th, id);
            proj_ring.push_back(id);
            if (proj_ring.size() > cfg_.mips.references) proj_ring.pop_front();
        } else {
            proj_src[t] = dec.result;
            ledger_.ops_demanded += proj_ops;
            if (dec.kind == mips::Kind::EarlySkip) ledger_.ops_skipped += proj_ops;
            else ledger_.ops_reused += proj_ops;
        }
    }

    std::vector<int> order(T);
    for (std::size_t t = 0; t < T; ++t) order[t] = static_cast<int>(t);
    if (use_mips) order = window.order();
    rr.processing_order = order;

    auto resolve = [](const std::vector<int>& src, int t) {
        while (src[static_cast<std::size_t>(t)] != t) t = src[static_cast<std::size_t>(t)];
        return t;
    };

    std::vector<Vec> q(T), k(T), v(T), logits(T);
    {
        std::vector<int> packed;
        std::vector<char> survive(T, 0);
        for (int s : proj_survivors) survive[static_cast<std::size_t>(s)] = 1;
        for (int t : order) {
            if (survive[static_cast<std::size_t>(t)]) packed.push_back(t);
        }
        int batch = 0;
        for (std::size_t b = 0; b < packed.size(); b += booth::kLanes, ++batch) {
            const std::size_t end = std::min(packed.size(), b + booth::kLanes);
            for (auto [m, dst, name] : {std::tuple{&wq_, &q, "wq"}, std::tuple{&wk_, &k, "wk"},
                                        std::tuple{&wv_, &v, "wv"}, std::tuple{&gate_, &logits, "gate"}}) {
                std::vector<Lane> lanes;
                for (std::size_t i = b; i < end; ++i) {
                    const auto t = static_cast<std::size_t>(packed[i]);
                    lanes.push_back({&cx[t], &(*dst)[t]});
                }
                batched_matvec(*m, name, lanes, batch, rr);
            }
        }
    }

    // ---- Stage 2: attention over the KV cache. A skipped token's cache entry is
    // the index of the entry it reuses.
    const double scale = std::sqrt(static_cast<double>(dk));
    const std::size_t k_capacity = cfg_.arch.qk_sram / d;
    const std::size_t v_capacity = cfg_.arch.v_sram / d;
    std::vector<int> kid(T);
    std::unordered_map<int, std::size_t> slot_of; // kid -> storage slot
    std::vector<Coded> cq(T), ck(T), cv(T);
    std::map<std::tuple<std::size_t, int, int>, double> score_memo;
    std::vector<Vec> cat(T, Vec(d, 0.0));
    const auto cores = static_cast<std::size_t>(cfg_.arch.cores);

    for (std::size_t t = 0; t < T; ++t) {
        const int src = resolve(proj_src, static_cast<int>(t));
        kid[t] = src;
        if (!slot_of.count(src)) {
            const std::size_t slot = slot_of.size();
            slot_of[src] = slot;
            const auto s = static_cast<std::size_t>(src);
            cq[s] = encode_vec(q[s], backend_);
            ck[s] = encode_vec(k[s], backend_);
            cv[s] = encode_vec(v[s], backend_);
            ledger_.sram_writes += d;                                          // q
            if (slot < k_capacity) ledger_.sram_writes += d; else ledger_.dram_writes += d;
            if (slot < v_capacity) ledger_.sram_writes += d; else ledger_.dram_writes += d;
        } else if (!use_mips) {
            throw std::logic_error("cache entry reused without MIPS");
        }
        const auto qs = static_cast<std::size_t>(src);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dk;
            const std::size_t core = h % cores;
            Vec s(t + 1);
            for (std::size_t j = 0; j <= t; ++j) {
                const int kj = kid[j];
                ledger_.ops_demanded += dk;
                const auto key = std::tuple{h, src, kj};
                if (use_mips) {
                    if (auto it = score_memo.find(key); it != score_memo.end()) {
                        s[j] = it->second;
                        ledger_.ops_reused += dk;
                        rr.attention_reused += dk;
                        ledger_.sram_reads += 1;
                        continue;
                    }
                }
                const auto ks = static_cast<std::size_t>(kj);
                const bool k_spilled = slot_of[kj] >= k_capacity;
                double acc = 0.0;
                for (std::size_t c = 0; c < dk; ++c) {
                    acc += scalar_product(backend_, cq[qs], off + c, ck[ks], off + c);
                    charge_plain(cq[qs].code[off + c], ck[ks].code[off + c]);
                }
                ledger_.charge_core(core, dk);
                ledger_.sram_reads += dk;
                if (k_spilled) ledger_.dram_reads += dk; else ledger_.sram_reads += dk;
                s[j] = acc / scale;
                if (use_mips) score_memo.emplace(key, s[j]);
            }
            softmax(s);
            const auto cp = encode_vec(s, backend_);
            std::unordered_map<int, std::vector<double>> pv_memo;
            Vec out(dk, 0.0);
            for (std::size_t j = 0; j <= t; ++j) {
                const int kj = kid[j];
                const auto vs = static_cast<std::size_t>(kj);
                ledger_.ops_demanded += dk;
                std::vector<double>* reuse = nullptr;
                if (use_mips) {
                    if (auto it = pv_memo.find(kj); it != pv_memo.end()) reuse = &it->second;
                }
                if (reuse) {
                    for (std::size_t c = 0; c < dk; ++c) out[c] += (*reuse)[c];
                    ledger_.ops_reused += dk;
                    rr.attention_reused += dk;
                    continue;
                }
                std::vector<double> prod(dk);
                const bool v_spilled = slot_of[kj] >= v_capacity;
                for (std::size_t c = 0; c < dk; ++c) {
                    prod[c] = scalar_product(backend_, cp, j, cv[vs], off + c);
                    out[c] += prod[c];
                    charge_plain(cp.code[j], cv[vs].code[off + c]);
                }
                ledger_.charge_core(core, dk);
                if (v_spilled) ledger_.dram_reads += dk; else ledger_.sram_reads += dk;
                if (use_mips) pv_memo.emplace(kj, std::move(prod));
            }
            for (std::size_t c = 0; c < dk; ++c) cat[t][off + c] = out[c];
        }
        ledger_.sram_writes += d;
    }

    // ---- Stage 3: W^O for every token.
    std::vector<Vec> attn(T);
    {
        std::vector<Coded> ccat(T);
        for (std::size_t t = 0; t < T; ++t) ccat[t] = encode_vec(cat[t], backend_);
        int batch = 0;
        for (std::size_t b = 0; b < T; b += booth::kLanes, ++batch) {
            std::vector<Lane> lanes;
            for (std::size_t i = b; i < std::min(T, b + booth::kLanes); ++i) {
                const auto t = static_cast<std::size_t>(order[i]);
                lanes.push_back({&ccat[t], &attn[t]});
            }
            batched_matvec(wo_, "wo", lanes, batch, rr);
        }
    }

    // ---- Stage 4: experts.
    std::vector<Vec> gates(T);
    for (std::size_t t = 0; t < T; ++t) {
        gates[t] = top_k_gate(logits[static_cast<std::size_t>(resolve(proj_src, static_cast<int>(t)))],
                              static_cast<std::size_t>(dims.top_k));
    }
    std::vector<std::vector<int>> exp_src(n_exp, std::vector<int>(T, -1));
    std::vector<std::vector<char>> exp_survive(n_exp, std::vector<char>(T, 0));
    std::vector<std::deque<int>> exp_ring(n_exp);
    std::vector<mips::HistoryLut> exp_lut(n_exp, mips::HistoryLut(hasher_.shape().levels(), cfg_.mips.lut_capacity));
    for (std::size_t t = 0; t < T; ++t) {
        const int id = static_cast<int>(t);
        for (std::size_t e = 0; e < n_exp; ++e) {
            if (gates[t][e] == 0.0) continue;
            if (!decide_on) {
                exp_src[e][t] = id;
                exp_survive[e][t] = 1;
                continue;
            }
            const auto refs = gather_refs(exp_ring[e], id, [&](int r) { return exp_src[e][static_cast<std::size_t>(r)] >= 0; });
            const auto dec = mips::decide(hasher_, trees[t], refs, exp_lut[e], cfg_.mips.th, &ledger_);
            rr.decisions.push_back({id, static_cast<int>(e), dec});
            rr.expert_decisions.add(dec.kind);
            if (dec.kind == mips::Kind::FullCompute) {
                exp_src[e][t] = id;
                exp_survive[e][t] = 1;
                mips::register_result(trees[t], refs, exp_lut[e], cfg_.mips.th, id);
                exp_ring[e].push_back(id);
                if (exp_ring[e].size() > cfg_.mips.references) exp_ring[e].pop_front();
            } else {
                exp_src[e][t] = dec.result;
                ledger_.ops_demanded += expert_ops;
                if (dec.kind == mips::Kind::EarlySkip) ledger_.ops_skipped += expert_ops;
                else ledger_.ops_reused += expert_ops;
            }
        }
    }

    std::vector<std::vector<Vec>> expert_out(n_exp, std::vector<Vec>(T));
    {
        std::vector<std::vector<int>> queue(n_exp);
        std::vector<int> fired(n_exp, 0);
        auto fire = [&](std::size_t e) {
            auto& qe = queue[e];
            if (qe.empty()) return;
            std::vector<Vec> hidden(qe.size());
            std::vector<Lane> lanes;
            for (std::size_t i = 0; i < qe.size(); ++i) lanes.push_back({&cx[static_cast<std::size_t>(qe[i])], &hidden[i]});
            batched_matvec(w1_[e], "w1_" + std::to_string(e), lanes, fired[e], rr);
            std::vector<Coded> ch(qe.size());
            lanes.clear();
            for (std::size_t i = 0; i < qe.size(); ++i) {
                ch[i] = encode_vec(relu(hidden[i]), backend_);
                lanes.push_back({&ch[i], &expert_out[e][static_cast<std::size_t>(qe[i])]});
            }
            batched_matvec(w2_[e], "w2_" + std::to_string(e), lanes, fired[e], rr);
            ++fired[e];
            qe.clear();
        };
        for (int t : order) {
            for (std::size_t e = 0; e < n_exp; ++e) {
                if (!exp_survive[e][static_cast<std::size_t>(t)]) continue;
                queue[e].push_back(t);
                if (queue[e].size() == booth::kLanes) fire(e);
            }
        }
        for (std::size_t e = 0; e < n_exp; ++e) fire(e);
    }

    // ---- Combine.
    rr.outputs.assign(T, Vec(d, 0.0));
    for (std::size_t t = 0; t < T; ++t) {
        auto& y = rr.outputs[t];
        for (std::size_t c = 0; c < d; ++c) y[c] = xs[t][c] + attn[t][c];
        for (std::size_t e = 0; e < n_exp; ++e) {
            if (gates[t][e] == 0.0) continue;
            const auto& o = expert_out[e][static_cast<std::size_t>(resolve(exp_src[e], static_cast<int>(t)))];
            const Vec gv{gates[t][e]};
            const auto cg = encode_vec(gv, backend_);
            const auto co = encode_vec(o, backend_);
            for (std::size_t c = 0; c < d; ++c) {
                y[c] += scalar_product(backend_, cg, 0, co, c);
                charge_plain(cg.code[0], co.code[c]);
                ledger_.charge_core(c % cores, 1);
            }
            ledger_.ops_demanded += d;
            ledger_.sram_reads += d;
        }
        ledger_.dram_writes += d;
    }

    CycleWeights cw = cfg_.arch.cycles;
    cw.parallel_pes = cfg_.arch.cores * cfg_.arch.pes_per_core;
    ledger_.finalize(cfg_.arch.costs, cw);
    rr.ledger = ledger_;
    return rr;
}

inline RunResult run_decode(const WorkloadTrace& trace, const ToyModel& model, const SimConfig& cfg)
{
    if (trace.spec.d_model != model.dims.d_model) throw ConfigError("trace d_model does not match the model");
    Simulator sim(model, cfg);
    return sim.run(trace.tokens);
}

// Exact full-compute pass: no features, arrival order, every access charged.
inline RunResult baseline_run(const WorkloadTrace& trace, const ToyModel& model, const SimConfig& cfg)
{
    SimConfig base = cfg;
    base.features = Features{};
    return run_decode(trace, model, base);
}

struct Fidelity {
    double min_cosine = 1.0;
    double mean_cosine = 1.0;
    double max_abs_error = 0.0;
    bool bit_exact = true;
    std::vector<double> per_token;
};

inline Fidelity compare_outputs(const std::vector<Vec>& ref, const std::vector<Vec>& got)
{
    Fidelity f;
    if (ref.empty()) return f;
    double sum = 0.0;
    for (std::size_t t = 0; t < ref.size(); ++t) {
        const double c = ref[t] == got[t] ? 1.0 : cosine(ref[t], got[t]);
        f.per_token.push_back(c);
        f.min_cosine = std::min(f.min_cosine, c);
        sum += c;
        for (std::size_t i = 0; i < ref[t].size(); ++i) {
            f.max_abs_error = std::max(f.max_abs_error, std::fabs(ref[t][i] - got[t][i]));
        }
        if (ref[t] != got[t]) f.bit_exact = false;
    }
    f.mean_cosine = sum / static_cast<double>(ref.size());
    return f;
}

} // namespace dspe
