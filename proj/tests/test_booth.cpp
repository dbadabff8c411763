#include "dspe/booth.hpp"
#include "oracles/hamiltonian.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <set>

using namespace dspe::booth;
using dspe::CostLedger;
using dspe::Rng;

namespace {

using Acts = std::array<std::int8_t, kLanes>;

Acts random_acts(Rng& rng)
{
    Acts a{};
    for (auto& x : a) x = static_cast<std::int8_t>(static_cast<int>(rng.index(256)) - 128);
    return a;
}

std::vector<std::vector<int>> cost_table(const Acts& a, const std::vector<int>& lanes, Radix radix)
{
    std::vector<std::vector<int>> c(lanes.size(), std::vector<int>(lanes.size()));
    for (std::size_t i = 0; i < lanes.size(); ++i) {
        for (std::size_t j = 0; j < lanes.size(); ++j) c[i][j] = flip_cost(a[lanes[i]], a[lanes[j]], radix);
    }
    return c;
}

std::vector<int> arrival(std::uint8_t mask)
{
    std::vector<int> out;
    for (int i = 0; i < kLanes; ++i) {
        if ((mask >> i) & 1) out.push_back(i);
    }
    return out;
}

} // namespace

TEST(BoothEncode, ZeroGivesZeroDigits)
{
    for (auto r : {Radix::R4, Radix::R8}) {
        const auto d = encode(0, r);
        for (int i = 0; i < d.count; ++i) EXPECT_EQ(d.digits[i], 0);
    }
}

TEST(BoothEncode, ExhaustiveRecombination)
{
    for (int x = -128; x <= 127; ++x) {
        const auto d4 = encode(static_cast<std::int8_t>(x), Radix::R4);
        const auto d8 = encode(static_cast<std::int8_t>(x), Radix::R8);
        EXPECT_EQ(d4.recombine(), x);
        EXPECT_EQ(d8.recombine(), x);
        EXPECT_EQ(d4.count, 4);
        EXPECT_EQ(d8.count, 3);
        for (int i = 0; i < d4.count; ++i) {
            EXPECT_GE(d4.digits[i], -2);
            EXPECT_LE(d4.digits[i], 2);
        }
        for (int i = 0; i < d8.count; ++i) {
            EXPECT_GE(d8.digits[i], -4);
            EXPECT_LE(d8.digits[i], 4);
        }
    }
}

TEST(BoothEncode, MultiplyIsExact)
{
    for (int w = -128; w <= 127; ++w) {
        for (int x = -128; x <= 127; ++x) {
            const auto wi = static_cast<std::int8_t>(w);
            const auto xi = static_cast<std::int8_t>(x);
            ASSERT_EQ(booth_multiply(wi, encode(xi, Radix::R4)), w * x);
            ASSERT_EQ(booth_multiply(wi, encode(xi, Radix::R8)), w * x);
        }
    }
}

TEST(BitStats, Similarity)
{
    EXPECT_DOUBLE_EQ(bit_similarity(0x5A, 0x5A), 1.0);
    EXPECT_DOUBLE_EQ(bit_similarity(0x00, 0xFF), 0.0);
    EXPECT_DOUBLE_EQ(bit_similarity(0x00, 0x03), 0.75);
}

TEST(BitStats, RepeatLength)
{
    EXPECT_EQ(repeat_length(0x3C, 0x3C), 8);
    EXPECT_EQ(repeat_length(0b10101010, 0b01010101), 0);
    EXPECT_EQ(repeat_length(0b11110000, 0b11111111), 4);
}

TEST(InvalidDetect, Thresholds)
{
    Rng rng(3);
    BoothBatch b{17, random_acts(rng)};
    EXPECT_EQ(invalid_detect(b, 0, 0), 0xFF);
    b.weight = 2;
    EXPECT_EQ(invalid_detect(b, 3, 0), 0x00);

    b.weight = 50;
    b.activations = {0, 3, -3, 4, -4, 127, -128, 5};
    std::uint8_t expect = 0;
    for (int i = 0; i < kLanes; ++i) {
        if (std::abs(static_cast<int>(b.activations[i])) >= 4) expect |= static_cast<std::uint8_t>(1 << i);
    }
    EXPECT_EQ(invalid_detect(b, 0, 4), expect);
    EXPECT_EQ(expect, 0b1111'1000);
}

TEST(BNClassify, UniformTablesReturnPrior)
{
    auto m = BNModel::uniform();
    m.prior = {0.3, 0.7};
    for (int b = 0; b <= 8; ++b) {
        for (int rl = 0; rl <= 8; ++rl) {
            const auto p = bn_classify(m, b / 8.0, rl);
            EXPECT_NEAR(p.p_low, 0.3, 1e-12);
            EXPECT_NEAR(p.p_high, 0.7, 1e-12);
        }
    }
}

TEST(BNClassify, DefaultModelNormalizedAndMatchesBayesRule)
{
    const auto m = default_bn_model();
    m.validate();
    for (int b = 0; b <= 8; ++b) {
        for (int rl = 0; rl <= 8; ++rl) {
            const double bs = b / 8.0;
            const auto p = bn_classify(m, bs, rl);
            EXPECT_NEAR(p.p_low + p.p_high, 1.0, 1e-9);
            // Independent evaluation of P(High | bs, rl).
            const int bi = bs >= 0.75 ? 3 : bs >= 0.5 ? 2 : bs >= 0.25 ? 1 : 0;
            const int ri = rl >= 6 ? 3 : rl >= 4 ? 2 : rl >= 2 ? 1 : 0;
            const double jl = m.prior[0] * m.cpt_bs[0][bi] * m.cpt_rl[0][ri];
            const double jh = m.prior[1] * m.cpt_bs[1][bi] * m.cpt_rl[1][ri];
            EXPECT_NEAR(p.p_high, jh / (jl + jh), 1e-12);
        }
    }
}

TEST(BNClassify, DefaultsReproduceFromCalibration)
{
    const auto fit = calibrate(calibration_trace(kCalibrationSeed, kCalibrationBatches, 0.1, 0.5));
    const auto def = default_bn_model();
    for (int c = 0; c < 2; ++c) {
        EXPECT_NEAR(fit.prior[c], def.prior[c], 1e-15);
        for (int b = 0; b < 4; ++b) {
            EXPECT_NEAR(fit.cpt_bs[c][b], def.cpt_bs[c][b], 1e-15);
            EXPECT_NEAR(fit.cpt_rl[c][b], def.cpt_rl[c][b], 1e-15);
        }
    }
}

TEST(BNClassify, CalibratedPosteriorOnLabeledTrace)
{
    // Hand-built trace: every observation in bin (3, 3) is High, all others Low.
    std::vector<Observation> obs;
    for (int i = 0; i < 30; ++i) obs.push_back({1.0, 8, true});
    for (int i = 0; i < 10; ++i) obs.push_back({0.1, 0, false});
    const auto m = calibrate(obs);
    // Counts with add-one smoothing: n = {11, 31}; bins: High 31/34 in bin 3, Low 11/14 in bin 0.
    const double pl = 11.0 / 42, ph = 31.0 / 42;
    const double low = pl * (1.0 / 14) * (1.0 / 14);
    const double high = ph * (31.0 / 34) * (31.0 / 34);
    const auto p = bn_classify(m, 1.0, 8);
    EXPECT_NEAR(p.p_high, high / (low + high), 1e-12);
}

TEST(BNClassify, MalformedTableRejected)
{
    auto m = BNModel::uniform();
    m.cpt_bs[1][2] = 0.5;
    EXPECT_THROW(m.validate(), std::invalid_argument);
    nlohmann::json j = BNModel::uniform().to_json();
    j["extra"] = 1;
    EXPECT_THROW(BNModel::from_json(j), std::invalid_argument);
    const auto back = BNModel::from_json(nlohmann::json::parse(default_bn_model().to_json().dump()));
    EXPECT_EQ(back.prior, default_bn_model().prior);
}

TEST(RedundancyScore, PathThreshold)
{
    EXPECT_DOUBLE_EQ(redundancy_score(1.0, 0.0, 0.2, 1.0), 0.2);
    EXPECT_DOUBLE_EQ(redundancy_score(0.0, 1.0, 0.2, 1.0), 1.0);
    const double s = redundancy_score(0.5, 0.5, 0.2, 1.0);
    EXPECT_DOUBLE_EQ(s, 0.6);
    EXPECT_EQ(select_path(s), Radix::R4);
    EXPECT_EQ(select_path(0.79), Radix::R4);
    EXPECT_EQ(select_path(0.81), Radix::R8);
    EXPECT_EQ(select_path(0.80), Radix::R8);
}

TEST(Bvm, IdenticalActivationsAllZero)
{
    Acts a;
    a.fill(37);
    const auto m = build_bvm(a, 0xFF);
    for (auto& row : m.bv) {
        for (auto v : row) EXPECT_EQ(v, 0);
    }
}

TEST(Bvm, SymmetricWithZeroDiagonalAndTriangleView)
{
    Rng rng(11);
    for (int t = 0; t < 200; ++t) {
        const auto a = random_acts(rng);
        const auto m = build_bvm(a, 0xFF);
        for (int i = 0; i < kLanes; ++i) {
            EXPECT_EQ(m.bv[i][i], 0);
            for (int j = 0; j < kLanes; ++j) EXPECT_EQ(m.bv[i][j], m.bv[j][i]);
        }
        const auto v = vst(m, a);
        EXPECT_EQ(v.entries.size(), 28u);
        std::set<int> slots;
        for (const auto& e : v.entries) {
            EXPECT_LT(e.i, e.j);
            slots.insert(vst_slot(e.i, e.j));
        }
        EXPECT_EQ(slots.size(), 28u);
        EXPECT_EQ(*slots.rbegin(), kVstSlots - 1);
    }
}

TEST(Bvm, FewerThanTwoValidGivesEmptyView)
{
    Rng rng(12);
    const auto a = random_acts(rng);
    EXPECT_TRUE(vst(build_bvm(a, 0b0000'0100), a).entries.empty());
    const auto r = order_batch(vst(build_bvm(a, 0b0000'0100), a), Radix::R4);
    EXPECT_EQ(r.order, std::vector<int>{2});
}

TEST(OrderBatch, IdenticalActivationsCostZero)
{
    Acts a;
    a.fill(-77);
    for (auto r : {Radix::R4, Radix::R8}) {
        const auto rk = order_batch(vst(build_bvm(a, 0xFF), a), r);
        EXPECT_EQ(rk.flip_cost, 0);
        EXPECT_EQ(rk.order.size(), 8u);
    }
}

TEST(OrderBatch, ClustersStayContiguous)
{
    const Acts a{5, -100, 5, -100, 5, -100, 5, -100};
    for (auto r : {Radix::R4, Radix::R8}) {
        const auto rk = order_batch(vst(build_bvm(a, 0xFF), a), r);
        int switches = 0;
        for (std::size_t t = 1; t < rk.order.size(); ++t) {
            switches += (a[rk.order[t]] > 0) != (a[rk.order[t - 1]] > 0);
        }
        EXPECT_EQ(switches, 1);
        EXPECT_EQ(rk.flip_cost, oracle::min_hamiltonian_path(cost_table(a, arrival(0xFF), r)));
    }
}

TEST(OrderBatch, NeverWorseThanArrivalAndNoBetterThanOptimal)
{
    Rng rng(21);
    for (int t = 0; t < 300; ++t) {
        const auto a = random_acts(rng);
        const auto mask = static_cast<std::uint8_t>(rng.index(256));
        const auto lanes = arrival(mask);
        for (auto r : {Radix::R4, Radix::R8}) {
            const auto rk = order_batch(vst(build_bvm(a, mask), a), r);
            std::vector<int> sorted = rk.order;
            std::sort(sorted.begin(), sorted.end());
            EXPECT_EQ(sorted, lanes);
            EXPECT_EQ(rk.flip_cost, order_cost(rk.order, a, r));
            EXPECT_LE(rk.flip_cost, order_cost(lanes, a, r));
            EXPECT_GE(rk.flip_cost, oracle::min_hamiltonian_path(cost_table(a, lanes, r)));
        }
    }
}

TEST(CompareAndSelect, Rules)
{
    Rng rng(5);
    const auto a = random_acts(rng);
    const auto view = vst(build_bvm(a, 0xFF), a);
    const auto r4 = order_batch(view, Radix::R4);
    EXPECT_EQ(compare_and_select(r4, std::nullopt, a, 0.1, 0.5).radix, Radix::R4);

    // Zero weights make both plans cost 0: tie goes to radix-4.
    const auto r8 = order_batch(view, Radix::R8);
    EXPECT_EQ(compare_and_select(r4, r8, a, 0.0, 0.0).radix, Radix::R4);

    // Identical small operands with no hard multiple: 24 rows vs 32, no flips.
    Acts same;
    same.fill(1);
    const auto sv = vst(build_bvm(same, 0xFF), same);
    const auto plan = compare_and_select(order_batch(sv, Radix::R4), order_batch(sv, Radix::R8), same, 0.1, 0.5);
    EXPECT_EQ(plan.radix, Radix::R8);
    EXPECT_EQ(plan.pp_rows, 24);
}

TEST(BoothLut, ExactRepeatHits)
{
    BoothLut lut;
    lut.update(3, 9, 12, 0, 0, 108.0);
    const auto hit = lut.try_replay(3, 9, 12, 0);
    EXPECT_TRUE(hit.hit);
    EXPECT_EQ(hit.product, 108.0);
    EXPECT_FALSE(lut.try_replay(3, 9, 13, 0).hit);
    EXPECT_FALSE(lut.try_replay(3, 8, 12, 0).hit); // other weight
    EXPECT_FALSE(lut.try_replay(4, 9, 12, 0).hit); // other slot
}

TEST(BoothLut, OneBitMatchErrorBound)
{
    for (int w = -128; w <= 127; ++w) {
        for (int a = -128; a <= 127; ++a) {
            for (int bit = 0; bit < 8; ++bit) {
                BoothLut lut;
                const auto wi = static_cast<std::int8_t>(w);
                const auto ai = static_cast<std::int8_t>(a);
                const auto bi = static_cast<std::int8_t>(a ^ (1 << bit));
                lut.update(0, wi, ai, 0, 0, static_cast<double>(w * a));
                const auto hit = lut.try_replay(0, wi, bi, 1);
                ASSERT_TRUE(hit.hit);
                const double err = std::fabs(hit.product - static_cast<double>(w * bi));
                ASSERT_LE(err, std::abs(w) * std::ldexp(1.0, bit));
            }
        }
    }
}

TEST(BoothLut, LeastRecentlyUsedEviction)
{
    BoothLut lut(2);
    lut.update(0, 1, 10, 0, 0, 10.0);
    lut.update(0, 1, 20, 0, 1, 20.0);
    EXPECT_TRUE(lut.try_replay(0, 1, 10, 0).hit); // refresh 10
    lut.update(0, 1, 30, 0, 2, 30.0);             // evicts 20
    EXPECT_TRUE(lut.try_replay(0, 1, 10, 0).hit);
    EXPECT_FALSE(lut.try_replay(0, 1, 20, 0).hit);
    EXPECT_TRUE(lut.try_replay(0, 1, 30, 0).hit);
    EXPECT_EQ(lut.slot(0).size(), 2u);
}

TEST(MblmExecute, AllZeroActivations)
{
    MblmConfig cfg;
    BoothLut lut;
    CostLedger ledger;
    const auto r = mblm_execute({42, {}}, cfg, lut, ledger);
    for (auto p : r.products) EXPECT_EQ(p, 0);
    EXPECT_EQ(ledger.booth_encodings, 0u);
    EXPECT_EQ(ledger.ops_skipped, 8u);
}

TEST(MblmExecute, ExactWhenApproximationOff)
{
    MblmConfig cfg;
    BoothLut lut;
    CostLedger ledger;
    Rng rng(99);
    for (int t = 0; t < 2000; ++t) {
        BoothBatch b{static_cast<std::int8_t>(static_cast<int>(rng.index(256)) - 128), random_acts(rng)};
        // Mix in repeats so replays happen.
        if (t % 3 == 0) b.activations[5] = b.activations[1];
        const auto r = mblm_execute(b, cfg, lut, ledger);
        for (int i = 0; i < kLanes; ++i) {
            ASSERT_EQ(r.products[i], static_cast<long>(b.weight) * b.activations[i]);
        }
    }
    EXPECT_GT(ledger.lut_replays, 0u);
    EXPECT_EQ(ledger.approx_events, 0u);
    EXPECT_EQ(ledger.ops_skipped + ledger.ops_reused + ledger.macs, ledger.ops_demanded);
}

TEST(MblmExecute, DuplicatedBatchReplays)
{
    MblmConfig cfg;
    BoothLut lut;
    CostLedger warm;
    BoothBatch b{-7, {}};
    b.activations.fill(23);
    mblm_execute(b, cfg, lut, warm);
    CostLedger ledger;
    const auto r = mblm_execute(b, cfg, lut, ledger);
    EXPECT_GE(ledger.lut_replays, 7u);
    for (auto p : r.products) EXPECT_EQ(p, -7 * 23);
}

TEST(MblmExecute, SkippedLanesRespectBound)
{
    MblmConfig cfg;
    cfg.r_zero_wgt = 3;
    cfg.r_zero_act = 5;
    Rng rng(4);
    for (int t = 0; t < 500; ++t) {
        BoothLut lut;
        CostLedger ledger;
        BoothBatch b{static_cast<std::int8_t>(static_cast<int>(rng.index(9)) - 4), random_acts(rng)};
        for (int i = 0; i < 4; ++i) b.activations[i] = static_cast<std::int8_t>(static_cast<int>(rng.index(11)) - 5);
        const auto mask = invalid_detect(b, cfg.r_zero_wgt, cfg.r_zero_act);
        const auto r = mblm_execute(b, cfg, lut, ledger);
        for (int i = 0; i < kLanes; ++i) {
            const long exact = static_cast<long>(b.weight) * b.activations[i];
            if ((mask >> i) & 1) {
                EXPECT_EQ(r.products[i], exact);
            } else {
                EXPECT_EQ(r.products[i], 0);
                EXPECT_LT(std::abs(exact), cfg.r_zero_wgt * 127 + cfg.r_zero_act * 127);
            }
        }
    }
}

TEST(MblmExecute, OrderedFlipsNeverExceedArrival)
{
    MblmConfig cfg;
    Rng rng(8);
    for (int t = 0; t < 300; ++t) {
        BoothLut lut;
        CostLedger ledger;
        BoothBatch b{static_cast<std::int8_t>(rng.index(100) + 1), random_acts(rng)};
        mblm_execute(b, cfg, lut, ledger);
        const auto bp = plan_batch(b.activations, cfg);
        const auto lanes = arrival(bp.active);
        EXPECT_LE(ledger.booth_digit_flips, static_cast<std::uint64_t>(order_cost(lanes, b.activations, bp.plan.radix)));
    }
}
