#pragma once

// Multi-stage Booth lookup for batches of eight multiplies that share a weight.
//
// Pipeline per batch: invalid/zero detection, naive-Bayes redundancy scoring,
// radix selection, flip-minimising lane order per radix, comparator, then
// execution with Booth-LUT replay.

#include "dspe/ledger.hpp"
#include "dspe/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dspe::booth {

inline constexpr int kLanes = 8;
inline constexpr int kVstSlots = kLanes * (kLanes - 1) / 2;

enum class Radix : int { R4 = 4, R8 = 8 };

inline const char* to_string(Radix r) { return r == Radix::R4 ? "radix4" : "radix8"; }

struct BoothDigits {
    Radix radix = Radix::R4;
    std::array<std::int8_t, 4> digits{};
    int count = 0;

    long recombine() const
    {
        const long base = static_cast<long>(radix);
        long v = 0, scale = 1;
        for (int i = 0; i < count; ++i) {
            v += digits[i] * scale;
            scale *= base;
        }
        return v;
    }
};

// Overlapping-window recoding of an 8-bit two's-complement operand, sign
// extended to 9 bits. Radix-4 gives 4 digits in [-2, 2], radix-8 gives 3 in [-4, 4].
constexpr BoothDigits encode(std::int8_t x, Radix radix)
{
    const int v = static_cast<int>(x) & 0x1FF; // 9-bit sign extension
    auto bit = [v](int i) { return i < 0 ? 0 : (v >> (i > 8 ? 8 : i)) & 1; };
    BoothDigits d;
    d.radix = radix;
    if (radix == Radix::R4) {
        d.count = 4;
        for (int i = 0; i < 4; ++i) {
            d.digits[i] = static_cast<std::int8_t>(-2 * bit(2 * i + 1) + bit(2 * i) + bit(2 * i - 1));
        }
    } else {
        d.count = 3;
        for (int i = 0; i < 3; ++i) {
            d.digits[i] = static_cast<std::int8_t>(-4 * bit(3 * i + 2) + 2 * bit(3 * i + 1)
                                                   + bit(3 * i) + bit(3 * i - 1));
        }
    }
    return d;
}

// Fixed 4-bit control word per digit: bit 3 = negate, bits 0..2 = |digit|.
constexpr std::uint16_t control_word(const BoothDigits& d)
{
    std::uint16_t w = 0;
    for (int i = 0; i < d.count; ++i) {
        const int dig = d.digits[i];
        const int mag = dig < 0 ? -dig : dig;
        const int nibble = (dig < 0 ? 0x8 : 0) | mag;
        w = static_cast<std::uint16_t>(w | (nibble << (4 * i)));
    }
    return w;
}

inline int flip_cost(std::int8_t a, std::int8_t b, Radix radix)
{
    return std::popcount(static_cast<unsigned>(control_word(encode(a, radix)) ^ control_word(encode(b, radix))));
}

// Partial-product rows: one per digit, plus one extra add for each radix-8
// hard multiple (|digit| == 3).
inline int pp_rows(std::int8_t a, Radix radix)
{
    const auto d = encode(a, radix);
    int rows = d.count;
    if (radix == Radix::R8) {
        for (int i = 0; i < d.count; ++i) rows += (d.digits[i] == 3 || d.digits[i] == -3);
    }
    return rows;
}

inline long booth_multiply(std::int8_t weight, const BoothDigits& d)
{
    const long base = static_cast<long>(d.radix);
    long acc = 0, scale = 1;
    for (int i = 0; i < d.count; ++i) {
        acc += static_cast<long>(d.digits[i]) * weight * scale;
        scale *= base;
    }
    return acc;
}

inline double bit_similarity(std::uint8_t a, std::uint8_t b)
{
    return 1.0 - std::popcount(static_cast<unsigned>(a ^ b)) / 8.0;
}

// Longest run of aligned bit positions where a and b agree.
inline int repeat_length(std::uint8_t a, std::uint8_t b)
{
    const unsigned same = ~static_cast<unsigned>(a ^ b) & 0xFF;
    int best = 0, run = 0;
    for (int i = 0; i < 8; ++i) {
        run = ((same >> i) & 1) ? run + 1 : 0;
        best = std::max(best, run);
    }
    return best;
}

struct BoothBatch {
    std::int8_t weight = 0;
    std::array<std::int8_t, kLanes> activations{};
};

inline int magnitude(std::int8_t x) { return std::abs(static_cast<int>(x)); }

// Bit i set = lane i valid.
inline std::uint8_t invalid_detect(const BoothBatch& batch, int r_zero_wgt, int r_zero_act)
{
    if (magnitude(batch.weight) < r_zero_wgt) return 0;
    std::uint8_t mask = 0;
    for (int i = 0; i < kLanes; ++i) {
        if (magnitude(batch.activations[i]) >= r_zero_act) mask |= static_cast<std::uint8_t>(1u << i);
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Redundancy classifier

enum class Redundancy { Low = 0, High = 1 };

inline int bs_bin(double bs) { return std::clamp(static_cast<int>(bs * 4.0), 0, 3); }
inline int rl_bin(int rl) { return std::clamp(rl / 2, 0, 3); }

struct BNModel {
    std::array<double, 2> prior{0.5, 0.5};          // P(Low), P(High)
    std::array<std::array<double, 4>, 2> cpt_bs{};  // P(BS bin | R)
    std::array<std::array<double, 4>, 2> cpt_rl{};  // P(RL bin | R)
    double r_low = 0.2;
    double r_high = 1.0;

    static BNModel uniform()
    {
        BNModel m;
        for (auto& row : m.cpt_bs) row.fill(0.25);
        for (auto& row : m.cpt_rl) row.fill(0.25);
        return m;
    }

    void validate() const
    {
        auto check = [](const auto& row, const char* what) {
            double s = 0.0;
            for (double p : row) {
                if (!(p >= 0.0)) throw std::invalid_argument(std::string("negative probability in ") + what);
                s += p;
            }
            if (std::fabs(s - 1.0) > 1e-9) throw std::invalid_argument(std::string(what) + " row does not sum to 1");
        };
        check(prior, "prior");
        check(cpt_bs[0], "cpt_bs");
        check(cpt_bs[1], "cpt_bs");
        check(cpt_rl[0], "cpt_rl");
        check(cpt_rl[1], "cpt_rl");
    }

    nlohmann::ordered_json to_json() const
    {
        nlohmann::ordered_json j;
        j["prior"] = prior;
        j["cpt_bs"] = cpt_bs;
        j["cpt_rl"] = cpt_rl;
        j["r_L"] = r_low;
        j["r_H"] = r_high;
        return j;
    }

    static BNModel from_json(const nlohmann::json& j)
    {
        static const std::array<const char*, 5> keys{"prior", "cpt_bs", "cpt_rl", "r_L", "r_H"};
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (std::find_if(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; }) == keys.end()) {
                throw std::invalid_argument("unknown key in BN model: " + it.key());
            }
        }
        BNModel m;
        m.prior = j.at("prior").get<std::array<double, 2>>();
        m.cpt_bs = j.at("cpt_bs").get<std::array<std::array<double, 4>, 2>>();
        m.cpt_rl = j.at("cpt_rl").get<std::array<std::array<double, 4>, 2>>();
        m.r_low = j.value("r_L", 0.2);
        m.r_high = j.value("r_H", 1.0);
        m.validate();
        return m;
    }
};

struct Posterior {
    double p_low = 0.5;
    double p_high = 0.5;
};

inline Posterior bn_classify(const BNModel& model, double bs, int re_length)
{
    const int b = bs_bin(bs), r = rl_bin(re_length);
    const double low = model.prior[0] * model.cpt_bs[0][b] * model.cpt_rl[0][r];
    const double high = model.prior[1] * model.cpt_bs[1][b] * model.cpt_rl[1][r];
    const double z = low + high;
    if (z <= 0.0) return {model.prior[0], model.prior[1]};
    return {low / z, high / z};
}

inline double redundancy_score(double p_low, double p_high, double r_low, double r_high)
{
    return r_low * p_low + r_high * p_high;
}

// Scores at or above the threshold take the extended radix-8 path.
inline Radix select_path(double score, double threshold = 0.8)
{
    return score < threshold ? Radix::R4 : Radix::R8;
}

struct Evidence {
    double bs = 1.0;
    int re_length = 8;
    int pairs = 0;
};

// Mean BS and mean Re-length over consecutive lanes in arrival order.
inline Evidence batch_evidence(const std::array<std::int8_t, kLanes>& acts, std::uint8_t mask)
{
    Evidence ev;
    double bs_sum = 0.0;
    int rl_sum = 0;
    int prev = -1;
    for (int i = 0; i < kLanes; ++i) {
        if (!((mask >> i) & 1)) continue;
        if (prev >= 0) {
            const auto a = static_cast<std::uint8_t>(acts[prev]);
            const auto b = static_cast<std::uint8_t>(acts[i]);
            bs_sum += bit_similarity(a, b);
            rl_sum += repeat_length(a, b);
            ++ev.pairs;
        }
        prev = i;
    }
    if (ev.pairs > 0) {
        ev.bs = bs_sum / ev.pairs;
        ev.re_length = (rl_sum + ev.pairs / 2) / ev.pairs;
    }
    return ev;
}

// ---------------------------------------------------------------------------
// Bit-variation statistics

struct BitVariationMatrix {
    std::array<std::array<std::uint8_t, kLanes>, kLanes> bv{};
    std::uint8_t valid = 0;
};

inline BitVariationMatrix build_bvm(const std::array<std::int8_t, kLanes>& acts, std::uint8_t mask)
{
    BitVariationMatrix m;
    m.valid = mask;
    for (int i = 0; i < kLanes; ++i) {
        for (int j = 0; j < kLanes; ++j) {
            if (((mask >> i) & 1) && ((mask >> j) & 1)) {
                m.bv[i][j] = static_cast<std::uint8_t>(
                    std::popcount(static_cast<unsigned>(static_cast<std::uint8_t>(acts[i] ^ acts[j]))));
            }
        }
    }
    return m;
}

constexpr int vst_slot(int i, int j)
{
    if (i > j) std::swap(i, j);
    return i * (2 * kLanes - i - 1) / 2 + (j - i - 1);
}

struct VstEntry {
    int i = 0;
    int j = 0;
    int bv = 0;
};

// Strict upper triangle of the BVM over valid lanes: no self pairs, no (B, A)
// duplicates of (A, B). Carries the activations so rankings can cost each radix.
struct Vst {
    std::vector<VstEntry> entries;
    std::array<std::int8_t, kLanes> activations{};
    std::uint8_t valid = 0;

    std::vector<int> lanes() const
    {
        std::vector<int> out;
        for (int i = 0; i < kLanes; ++i) {
            if ((valid >> i) & 1) out.push_back(i);
        }
        return out;
    }
};

inline Vst vst(const BitVariationMatrix& bvm, const std::array<std::int8_t, kLanes>& acts)
{
    Vst v;
    v.activations = acts;
    v.valid = bvm.valid;
    if (std::popcount(static_cast<unsigned>(bvm.valid)) < 2) return v;
    for (int i = 0; i < kLanes; ++i) {
        for (int j = i + 1; j < kLanes; ++j) {
            if (((bvm.valid >> i) & 1) && ((bvm.valid >> j) & 1)) v.entries.push_back({i, j, bvm.bv[i][j]});
        }
    }
    return v;
}

inline int order_cost(const std::vector<int>& order, const std::array<std::int8_t, kLanes>& acts, Radix radix)
{
    int cost = 0;
    for (std::size_t t = 1; t < order.size(); ++t) cost += flip_cost(acts[order[t - 1]], acts[order[t]], radix);
    return cost;
}

struct Ranking {
    Radix radix = Radix::R4;
    std::vector<int> order;
    int flip_cost = 0;
};

using FlipMatrix = std::array<std::array<int, kLanes>, kLanes>;

inline FlipMatrix flip_matrix(const std::array<std::int8_t, kLanes>& acts, Radix radix)
{
    std::array<std::uint16_t, kLanes> ctrl{};
    for (int i = 0; i < kLanes; ++i) ctrl[i] = control_word(encode(acts[i], radix));
    FlipMatrix m{};
    for (int i = 0; i < kLanes; ++i) {
        for (int j = 0; j < kLanes; ++j) m[i][j] = std::popcount(static_cast<unsigned>(ctrl[i] ^ ctrl[j]));
    }
    return m;
}

inline int path_cost(const std::vector<int>& order, const FlipMatrix& c)
{
    int cost = 0;
    for (std::size_t t = 1; t < order.size(); ++t) cost += c[order[t - 1]][order[t]];
    return cost;
}

// Segment reversal and single-lane relocation until no move improves the path.
inline void refine_order(std::vector<int>& order, const FlipMatrix& c)
{
    const int n = static_cast<int>(order.size());
    int cost = path_cost(order, c);
    bool improved = true;
    while (improved) {
        improved = false;
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                auto trial = order;
                std::reverse(trial.begin() + i, trial.begin() + j + 1);
                const int tc = path_cost(trial, c);
                if (tc < cost) {
                    order = std::move(trial);
                    cost = tc;
                    improved = true;
                }
            }
        }
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                auto trial = order;
                const int lane = trial[i];
                trial.erase(trial.begin() + i);
                trial.insert(trial.begin() + j, lane);
                const int tc = path_cost(trial, c);
                if (tc < cost) {
                    order = std::move(trial);
                    cost = tc;
                    improved = true;
                }
            }
        }
    }
}

// Greedy nearest neighbour under the radix's digit-flip cost, starting from the
// lane with the smallest total BV, then locally refined. Arrival order is kept
// when nothing beats it.
inline Ranking order_batch(const Vst& v, Radix radix)
{
    Ranking r;
    r.radix = radix;
    const auto lanes = v.lanes();
    r.order = lanes;
    if (v.entries.empty()) {
        r.flip_cost = order_cost(lanes, v.activations, radix);
        return r;
    }
    const auto c = flip_matrix(v.activations, radix);
    r.flip_cost = path_cost(lanes, c);

    std::array<int, kLanes> total{};
    for (const auto& e : v.entries) {
        total[e.i] += e.bv;
        total[e.j] += e.bv;
    }
    int start = lanes.front();
    for (int lane : lanes) {
        if (total[lane] < total[start]) start = lane;
    }
    std::vector<int> greedy{start};
    std::uint8_t used = static_cast<std::uint8_t>(1u << start);
    while (greedy.size() < lanes.size()) {
        int best = -1;
        for (int lane : lanes) {
            if ((used >> lane) & 1) continue;
            if (best < 0 || c[greedy.back()][lane] < c[greedy.back()][best]) best = lane;
        }
        greedy.push_back(best);
        used |= static_cast<std::uint8_t>(1u << best);
    }
    refine_order(greedy, c);
    const int greedy_cost = path_cost(greedy, c);
    if (greedy_cost <= r.flip_cost) {
        r.order = std::move(greedy);
        r.flip_cost = greedy_cost;
    }
    return r;
}

struct Plan {
    Radix radix = Radix::R4;
    std::vector<int> order;
    int flip_cost = 0;
    int pp_rows = 0;
    double energy = 0.0;
};

inline Plan make_plan(const Ranking& r, const std::array<std::int8_t, kLanes>& acts, double flip_weight, double row_weight)
{
    Plan p{r.radix, r.order, r.flip_cost, 0, 0.0};
    for (int lane : r.order) p.pp_rows += pp_rows(acts[lane], r.radix);
    p.energy = flip_weight * p.flip_cost + row_weight * p.pp_rows;
    return p;
}

// Lower modeled energy wins; ties stay on the regular radix-4 path.
inline Plan compare_and_select(const Ranking& ranking2, const std::optional<Ranking>& ranking2_r8,
                               const std::array<std::int8_t, kLanes>& acts, double flip_weight, double row_weight)
{
    Plan regular = make_plan(ranking2, acts, flip_weight, row_weight);
    if (!ranking2_r8) return regular;
    Plan extended = make_plan(*ranking2_r8, acts, flip_weight, row_weight);
    return extended.energy < regular.energy ? extended : regular;
}

// ---------------------------------------------------------------------------
// Booth-LUT

class BoothLut {
public:
    struct Entry {
        std::uint8_t bv_pattern = 0;
        int seq_index = 0;
        std::int8_t weight = 0;
        std::int8_t activation = 0;
        double product = 0.0;
        std::uint64_t age = 0;
    };

    struct Lookup {
        bool hit = false;
        double product = 0.0;
        std::uint8_t pattern = 0;
        std::int8_t source = 0;
    };

    explicit BoothLut(std::size_t capacity_per_slot = 4) : capacity_(capacity_per_slot) {}

    std::size_t capacity() const { return capacity_; }
    const std::vector<Entry>& slot(int s) const { return slots_[s]; }

    // Hit iff some entry with the same weight differs from the activation in at
    // most t_match bits. The closest entry is replayed.
    Lookup try_replay(int s, std::int8_t weight, std::int8_t activation, int t_match)
    {
        Lookup out;
        Entry* best = nullptr;
        int best_bits = 9;
        for (auto& e : slots_[s]) {
            if (e.weight != weight) continue;
            const int bits = std::popcount(static_cast<unsigned>(static_cast<std::uint8_t>(e.activation ^ activation)));
            if (bits < best_bits) {
                best = &e;
                best_bits = bits;
            }
        }
        if (best != nullptr && best_bits <= t_match) {
            best->age = ++clock_;
            out.hit = true;
            out.product = best->product;
            out.pattern = static_cast<std::uint8_t>(best->activation ^ activation);
            out.source = best->activation;
        }
        return out;
    }

    void update(int s, std::int8_t weight, std::int8_t activation, std::uint8_t pattern, int seq_index, double product)
    {
        auto& entries = slots_[s];
        for (auto& e : entries) {
            if (e.weight == weight && e.activation == activation) {
                e.bv_pattern = pattern;
                e.seq_index = seq_index;
                e.product = product;
                e.age = ++clock_;
                return;
            }
        }
        if (capacity_ == 0) return;
        if (entries.size() >= capacity_) {
            auto lru = std::min_element(entries.begin(), entries.end(),
                                        [](const Entry& a, const Entry& b) { return a.age < b.age; });
            entries.erase(lru);
        }
        entries.push_back({pattern, seq_index, weight, activation, product, ++clock_});
    }

private:
    std::size_t capacity_;
    std::uint64_t clock_ = 0;
    std::array<std::vector<Entry>, kVstSlots> slots_{};
};

// ---------------------------------------------------------------------------
// Pipeline

BNModel default_bn_model();

struct MblmConfig {
    int r_zero_wgt = 0;
    int r_zero_act = 0;
    int t_match = 0;
    double score_threshold = 0.8;
    std::size_t lut_capacity = 4;
    double flip_weight = CostWeights{}.digit_flip;
    double row_weight = CostWeights{}.pp_row;
    BNModel bn = default_bn_model();
};

// Lane schedule for one set of activations; reusable across weights.
struct BatchPlan {
    std::uint8_t present = 0xFF; // lanes holding an operand; the rest are padding
    std::uint8_t valid = 0;     // lanes that pass the activation threshold
    std::uint8_t active = 0;    // valid and nonzero: the lanes that run
    Posterior posterior;
    double score = 0.0;
    Radix path = Radix::R4;     // classifier choice
    Plan plan;                  // comparator choice
};

inline BatchPlan plan_batch(const std::array<std::int8_t, kLanes>& acts, const MblmConfig& cfg,
                            std::uint8_t present = 0xFF)
{
    BatchPlan bp;
    bp.present = present;
    BoothBatch probe{1, acts};
    bp.valid = invalid_detect(probe, 0, cfg.r_zero_act) & present;
    for (int i = 0; i < kLanes; ++i) {
        if (((bp.valid >> i) & 1) && acts[i] != 0) bp.active |= static_cast<std::uint8_t>(1u << i);
    }
    const auto bvm = build_bvm(acts, bp.active);
    const auto view = vst(bvm, acts);
    if (view.entries.empty()) {
        bp.plan = make_plan(order_batch(view, Radix::R4), acts, cfg.flip_weight, cfg.row_weight);
        return bp;
    }
    const auto ev = batch_evidence(acts, bp.active);
    bp.posterior = bn_classify(cfg.bn, ev.bs, ev.re_length);
    bp.score = redundancy_score(bp.posterior.p_low, bp.posterior.p_high, cfg.bn.r_low, cfg.bn.r_high);
    bp.path = select_path(bp.score, cfg.score_threshold);
    const auto ranking2 = order_batch(view, Radix::R4);
    std::optional<Ranking> ranking2_r8;
    if (bp.path == Radix::R8) ranking2_r8 = order_batch(view, Radix::R8);
    bp.plan = compare_and_select(ranking2, ranking2_r8, acts, cfg.flip_weight, cfg.row_weight);
    return bp;
}

struct ExecStats {
    int skipped = 0;
    int replayed = 0;
    int executed = 0;
    int flips = 0;
};

// Runs one weight through a plan. `mul(w, a)` produces the product of the two
// operand codes; `on_exec(w, a)` is called once per multiply actually executed.
template <class Mul, class OnExec>
ExecStats execute_plan(const BatchPlan& bp, std::int8_t weight, const std::array<std::int8_t, kLanes>& acts,
                       const MblmConfig& cfg, BoothLut& lut, CostLedger& ledger,
                       std::array<double, kLanes>& products, Mul&& mul, OnExec&& on_exec)
{
    ExecStats st;
    products.fill(0.0);
    const int lanes = std::popcount(static_cast<unsigned>(bp.present));
    ledger.ops_demanded += static_cast<std::uint64_t>(lanes);
    const bool weight_ok = magnitude(weight) >= cfg.r_zero_wgt && weight != 0;
    const std::uint8_t run = weight_ok ? bp.active : 0;
    st.skipped = lanes - std::popcount(static_cast<unsigned>(run));
    ledger.ops_skipped += static_cast<std::uint64_t>(st.skipped);

    const auto& order = bp.plan.order;
    std::optional<std::uint16_t> last_ctrl;
    int prev = -1;
    bool prev_exact = false;
    int seq = 0;
    for (int lane : order) {
        if (!((run >> lane) & 1)) continue;
        const std::int8_t a = acts[lane];
        bool replayed = false;
        bool exact = true;
        if (prev >= 0) {
            const int s = vst_slot(prev, lane);
            const auto pattern = static_cast<std::uint8_t>(acts[prev] ^ a);
            if (prev_exact) lut.update(s, weight, acts[prev], pattern, seq - 1, products[prev]);
            const auto hit = lut.try_replay(s, weight, a, cfg.t_match);
            if (hit.hit) {
                products[lane] = hit.product;
                replayed = true;
                ++st.replayed;
                if (hit.pattern != 0) {
                    exact = false;
                    ++ledger.approx_events;
                    ledger.approx_abs_error += std::fabs(mul(weight, a) - hit.product);
                }
            }
        }
        if (!replayed) {
            const auto digits = encode(a, bp.plan.radix);
            const auto ctrl = control_word(digits);
            if (last_ctrl) st.flips += std::popcount(static_cast<unsigned>(*last_ctrl ^ ctrl));
            last_ctrl = ctrl;
            products[lane] = mul(weight, a);
            on_exec(weight, a);
            ++st.executed;
            ++ledger.booth_encodings;
            ledger.pp_rows += static_cast<std::uint64_t>(pp_rows(a, bp.plan.radix));
        }
        prev = lane;
        prev_exact = exact;
        ++seq;
    }
    ledger.ops_reused += static_cast<std::uint64_t>(st.replayed);
    ledger.lut_replays += static_cast<std::uint64_t>(st.replayed);
    ledger.macs += static_cast<std::uint64_t>(st.executed);
    ledger.booth_digit_flips += static_cast<std::uint64_t>(st.flips);
    return st;
}

struct MblmResult {
    std::array<long, kLanes> products{};
    BatchPlan plan;
    ExecStats stats;
};

// Integer-operand pipeline: detect, classify, select, order, replay, multiply.
inline MblmResult mblm_execute(const BoothBatch& batch, const MblmConfig& cfg, BoothLut& lut, CostLedger& ledger)
{
    MblmResult r;
    r.plan = plan_batch(batch.activations, cfg);
    std::array<double, kLanes> products{};
    r.stats = execute_plan(
        r.plan, batch.weight, batch.activations, cfg, lut, ledger, products,
        [&](std::int8_t w, std::int8_t a) { return static_cast<double>(booth_multiply(w, encode(a, r.plan.plan.radix))); },
        [](std::int8_t, std::int8_t) {});
    for (int i = 0; i < kLanes; ++i) r.products[i] = std::lround(products[i]);
    return r;
}

// ---------------------------------------------------------------------------
// Calibration

struct Observation {
    double bs = 0.0;
    int re_length = 0;
    bool high = false;
};

// Frequency counts with add-one smoothing.
inline BNModel calibrate(const std::vector<Observation>& obs, double r_low = 0.2, double r_high = 1.0)
{
    std::array<double, 2> n{1.0, 1.0};
    std::array<std::array<double, 4>, 2> bs{}, rl{};
    for (auto& row : bs) row.fill(1.0);
    for (auto& row : rl) row.fill(1.0);
    for (const auto& o : obs) {
        const int c = o.high ? 1 : 0;
        n[c] += 1.0;
        bs[c][bs_bin(o.bs)] += 1.0;
        rl[c][rl_bin(o.re_length)] += 1.0;
    }
    BNModel m;
    m.r_low = r_low;
    m.r_high = r_high;
    m.prior = {n[0] / (n[0] + n[1]), n[1] / (n[0] + n[1])};
    for (int c = 0; c < 2; ++c) {
        double sb = 0.0, sr = 0.0;
        for (int b = 0; b < 4; ++b) {
            sb += bs[c][b];
            sr += rl[c][b];
        }
        for (int b = 0; b < 4; ++b) {
            m.cpt_bs[c][b] = bs[c][b] / sb;
            m.cpt_rl[c][b] = rl[c][b] / sr;
        }
    }
    return m;
}

// Labeled synthetic batches: each batch is a base value plus per-lane noise of a
// randomly chosen spread. Label High iff the ordered radix-8 plan is cheaper than
// the ordered radix-4 plan.
inline std::vector<Observation> calibration_trace(std::uint64_t seed, int batches, double flip_weight, double row_weight)
{
    Rng rng(seed);
    static constexpr std::array<int, 5> spreads{0, 1, 4, 16, 64};
    std::vector<Observation> out;
    out.reserve(static_cast<std::size_t>(batches));
    for (int b = 0; b < batches; ++b) {
        const int base = static_cast<int>(rng.index(256)) - 128;
        const int spread = spreads[rng.index(spreads.size())];
        std::array<std::int8_t, kLanes> acts{};
        for (auto& a : acts) {
            const int noise = spread == 0 ? 0 : static_cast<int>(rng.index(2 * spread + 1)) - spread;
            a = static_cast<std::int8_t>(std::clamp(base + noise, -128, 127));
        }
        const auto view = vst(build_bvm(acts, 0xFF), acts);
        const auto p4 = make_plan(order_batch(view, Radix::R4), acts, flip_weight, row_weight);
        const auto p8 = make_plan(order_batch(view, Radix::R8), acts, flip_weight, row_weight);
        const auto ev = batch_evidence(acts, 0xFF);
        out.push_back({ev.bs, ev.re_length, p8.energy < p4.energy});
    }
    return out;
}

inline constexpr std::uint64_t kCalibrationSeed = 20240611;
inline constexpr int kCalibrationBatches = 20000;

} // namespace dspe::booth

#include "dspe/bn_default.hpp"
