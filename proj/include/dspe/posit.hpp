#pragma once

// Posit-8 (es = 2) codec and the DA-Posit mode system.
//
// A DA-Posit word is an ordinary posit-8 bit pattern. Its compression mode is
// recomputed from the pattern: mode m > 0 means the low m fraction bits repeat
// the low m exponent bits, so the multiplier only needs the remaining core bits
// of the mantissa plus the m shared bits. Values are never affected by the mode.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>

namespace dspe::posit {

inline constexpr int kWidth = 8;
inline constexpr int kEs = 2;
inline constexpr std::uint8_t kZero = 0x00;
inline constexpr std::uint8_t kNaR = 0x80;
inline constexpr std::uint8_t kMaxPos = 0x7F;
inline constexpr std::uint8_t kMinPos = 0x01;
// maxpos = 2^24, minpos = 2^-24 for posit<8,2>.
inline constexpr int kMaxScale = (kWidth - 2) * (1 << kEs);

struct PositWord {
    std::uint8_t bits = 0;

    friend constexpr bool operator==(PositWord, PositWord) = default;
};

enum class Special : std::uint8_t { Finite, Zero, NaR };

struct DecodedPosit {
    Special special = Special::Zero;
    int sign = 1;             // +1 or -1
    int k = 0;                // regime value
    int e = 0;                // exponent value, truncated bits read as 0
    std::uint8_t fraction = 0;
    int fraction_bits = 0;
    int exponent_bits = 0;    // exponent bits physically present (0..es)
    int regime_bits = 0;      // including the terminator when present
    int E = 0;                // composite exponent k * 2^es + e

    constexpr bool is_finite() const { return special == Special::Finite; }
    // Mantissa 1.f as an integer with fraction_bits fractional bits.
    constexpr std::uint32_t mantissa() const { return (1u << fraction_bits) | fraction; }
};

constexpr int composite_exponent(int k, int e, int es = kEs) { return k * (1 << es) + e; }

// sign * mantissa * 2^exponent. Products of posits are exactly representable.
struct Dyadic {
    int sign = 1;
    std::uint64_t mantissa = 0;
    int exponent = 0;

    double to_double() const
    {
        return sign * std::ldexp(static_cast<double>(mantissa), exponent);
    }
};

constexpr DecodedPosit decode(PositWord w)
{
    DecodedPosit d;
    if (w.bits == kZero) {
        d.special = Special::Zero;
        return d;
    }
    if (w.bits == kNaR) {
        d.special = Special::NaR;
        return d;
    }
    d.special = Special::Finite;
    std::uint8_t p = w.bits;
    if (p & 0x80) {
        d.sign = -1;
        p = static_cast<std::uint8_t>(-p);
    }
    const int lead = (p >> 6) & 1;
    int run = 0;
    for (int i = 6; i >= 0 && ((p >> i) & 1) == lead; --i) {
        ++run;
    }
    d.k = lead ? run - 1 : -run;
    d.regime_bits = run < 7 ? run + 1 : 7;
    int remaining = 7 - d.regime_bits;
    d.exponent_bits = remaining < kEs ? remaining : kEs;
    remaining -= d.exponent_bits;
    const int e_raw = (p >> remaining) & ((1 << d.exponent_bits) - 1);
    d.e = e_raw << (kEs - d.exponent_bits);
    d.fraction_bits = remaining;
    d.fraction = static_cast<std::uint8_t>(p & ((1 << remaining) - 1));
    d.E = composite_exponent(d.k, d.e);
    return d;
}

inline Dyadic exact_value(const DecodedPosit& d)
{
    if (!d.is_finite()) {
        return {};
    }
    return {d.sign, d.mantissa(), d.E - d.fraction_bits};
}

// Round-to-nearest-even on the bit string, saturating to [minpos, maxpos].
inline PositWord encode(const Dyadic& v)
{
    if (v.mantissa == 0) {
        return {kZero};
    }
    const int msb = 63 - std::countl_zero(v.mantissa);
    const int scale = v.exponent + msb;
    std::uint8_t magnitude;
    if (scale >= kMaxScale) {
        magnitude = kMaxPos;
    } else if (scale < -kMaxScale) {
        magnitude = kMinPos;
    } else {
        std::uint64_t frac = v.mantissa & ((msb == 0) ? 0 : (~0ull >> (64 - msb)));
        int frac_bits = msb;
        bool sticky = false;
        if (frac_bits > 48) {
            const int drop = frac_bits - 48;
            sticky = (frac & ((1ull << drop) - 1)) != 0;
            frac >>= drop;
            frac_bits = 48;
        }
        const int k = scale >= 0 ? scale >> kEs : -((-scale + (1 << kEs) - 1) >> kEs);
        const int e = scale - k * (1 << kEs);
        std::uint64_t regime;
        int regime_len;
        if (k >= 0) {
            regime_len = k + 2;
            regime = ((1ull << (k + 1)) - 1) << 1;
        } else {
            regime_len = -k + 1;
            regime = 1;
        }
        const int len = regime_len + kEs + frac_bits;
        const std::uint64_t bits = (regime << (kEs + frac_bits))
                                 | (static_cast<std::uint64_t>(e) << frac_bits) | frac;
        std::uint64_t keep;
        if (len <= 7) {
            keep = bits << (7 - len);
        } else {
            const int shift = len - 7;
            keep = bits >> shift;
            const std::uint64_t rest = bits & ((1ull << shift) - 1);
            const bool guard = (rest >> (shift - 1)) & 1;
            const bool tail = sticky || (rest & ((1ull << (shift - 1)) - 1)) != 0;
            if (guard && (tail || (keep & 1))) {
                ++keep;
            }
        }
        if (keep < kMinPos) keep = kMinPos;
        if (keep > kMaxPos) keep = kMaxPos;
        magnitude = static_cast<std::uint8_t>(keep);
    }
    const auto out = v.sign < 0 ? static_cast<std::uint8_t>(-magnitude) : magnitude;
    return {out};
}

inline PositWord encode(double x)
{
    if (std::isnan(x) || std::isinf(x)) {
        return {kNaR};
    }
    if (x == 0.0) {
        return {kZero};
    }
    int exp2 = 0;
    const double m = std::frexp(std::fabs(x), &exp2); // m in [0.5, 1)
    const auto mant = static_cast<std::uint64_t>(std::ldexp(m, 53));
    return encode(Dyadic{x < 0 ? -1 : 1, mant, exp2 - 53});
}

inline double to_double(PositWord w)
{
    const auto d = decode(w);
    if (d.special == Special::NaR) return std::nan("");
    return exact_value(d).to_double();
}

// ---------------------------------------------------------------------------
// DA-Posit modes

struct DAPositWord {
    PositWord word;
    int mode = 0;                 // 0, 1 or 2 shared bits
    std::uint8_t shared_bits = 0; // low `mode` bits of the exponent
};

constexpr DAPositWord detect_mode(PositWord w)
{
    const auto d = decode(w);
    DAPositWord out{w, 0, 0};
    if (!d.is_finite() || d.exponent_bits < kEs) {
        return out;
    }
    for (int m = 2; m >= 1; --m) {
        const int mask = (1 << m) - 1;
        if (d.fraction_bits >= m && (d.fraction & mask) == (d.e & mask)) {
            out.mode = m;
            out.shared_bits = static_cast<std::uint8_t>(d.e & mask);
            return out;
        }
    }
    return out;
}

// Upper bound on the mode from the leading four bits of the magnitude pattern
// (sign + first three regime bits). Mirrors a decoder-side fast path.
inline constexpr std::array<std::uint8_t, 16> kModeHintTable = [] {
    std::array<std::uint8_t, 16> t{};
    for (int top = 0; top < 16; ++top) {
        int best = 0;
        for (int low = 0; low < 16; ++low) {
            const auto bits = static_cast<std::uint8_t>((top << 4) | low);
            if (bits & 0x80) continue; // magnitudes only
            const int m = detect_mode(PositWord{bits}).mode;
            best = m > best ? m : best;
        }
        t[top] = static_cast<std::uint8_t>(best);
    }
    return t;
}();

inline int mode_hint(PositWord w)
{
    std::uint8_t p = w.bits;
    if (p & 0x80) p = static_cast<std::uint8_t>(-p);
    return kModeHintTable[p >> 4];
}

// Split form used by the reduced multiplier: core mantissa plus shared bits.
struct FoldedPosit {
    PositWord original;
    int mode = 0;
    int sign = 1;
    int k = 0;
    int e = 0;
    std::uint8_t core = 0;   // mantissa with the low `mode` bits removed
    int core_bits = 0;       // width of the core including the hidden 1
    std::uint8_t shared = 0;
};

inline FoldedPosit fold(PositWord w)
{
    const auto d = decode(w);
    const auto da = detect_mode(w);
    FoldedPosit f{w, da.mode, d.sign, d.k, d.e, 0, 0, da.shared_bits};
    if (d.is_finite()) {
        f.core = static_cast<std::uint8_t>(d.mantissa() >> da.mode);
        f.core_bits = d.fraction_bits + 1 - da.mode;
    }
    return f;
}

// Restores the word from the folded fields; the shared bits come from the exponent.
inline PositWord unfold(const FoldedPosit& f)
{
    if (f.original.bits == kZero || f.original.bits == kNaR) {
        return f.original;
    }
    const int shared = f.e & ((1 << f.mode) - 1);
    const std::uint32_t mant = (static_cast<std::uint32_t>(f.core) << f.mode) | shared;
    const int frac_bits = f.core_bits - 1 + f.mode;
    return encode(Dyadic{f.sign, mant, composite_exponent(f.k, f.e) - frac_bits});
}

struct MulCostReport {
    int mode = 0;
    int pe_cells = 16;
    int pp_rows = 4;
    int normalization_shift = 0;
    int saved_bits = 0; // mode bits plus the end-bit fold in mode 2
};

constexpr int pe_cells_for_mode(int m) { return (4 - m) * (4 - m); }

struct MulResult {
    PositWord value;
    MulCostReport cost;
};

// Mode-branched multiply. The core array handles (4-m) x (4-m) bits; the shared
// bits re-enter as compensation terms, so the product stays exact before the
// single final rounding.
inline MulResult da_multiply(PositWord a, PositWord b)
{
    const auto fa = fold(a);
    const auto fb = fold(b);
    const int m = fa.mode < fb.mode ? fa.mode : fb.mode;

    MulResult r;
    r.cost.mode = m;
    r.cost.pe_cells = pe_cells_for_mode(m);
    r.cost.pp_rows = 4 - m;
    r.cost.saved_bits = m == 2 ? 3 : m;

    if (a.bits == kNaR || b.bits == kNaR) {
        r.value = {kNaR};
        return r;
    }
    if (a.bits == kZero || b.bits == kZero) {
        r.value = {kZero};
        return r;
    }
    const auto da = decode(a);
    const auto db = decode(b);
    const std::uint32_t ma = da.mantissa();
    const std::uint32_t mb = db.mantissa();
    const std::uint32_t mask = (1u << m) - 1;
    const std::uint32_t ca = ma >> m, sa = ma & mask;
    const std::uint32_t cb = mb >> m, sb = mb & mask;

    // Partial-product rows of the core array, one per multiplier bit.
    std::uint32_t core = 0;
    for (int row = 0; row < 4 - m; ++row) {
        if ((cb >> row) & 1) core += ca << row;
    }
    const std::uint32_t product = (core << (2 * m)) + ((ca * sb + cb * sa) << m) + sa * sb;

    const int frac_bits = da.fraction_bits + db.fraction_bits;
    // Mantissa product lies in [1, 4); outside [1, 2) it needs a one-bit shift.
    r.cost.normalization_shift = product >= (2u << frac_bits) ? 1 : 0;
    r.value = encode(Dyadic{da.sign * db.sign, product, da.E + db.E - frac_bits});
    return r;
}

// Full 256 x 256 result table built from da_multiply.
struct MulTable {
    std::array<std::uint8_t, 65536> value{};
    std::array<std::uint8_t, 65536> mode{};

    MulTable()
    {
        for (int a = 0; a < 256; ++a) {
            for (int b = 0; b < 256; ++b) {
                const auto r = da_multiply(PositWord{static_cast<std::uint8_t>(a)},
                                           PositWord{static_cast<std::uint8_t>(b)});
                value[a * 256 + b] = r.value.bits;
                mode[a * 256 + b] = static_cast<std::uint8_t>(r.cost.mode);
            }
        }
    }

    static const MulTable& instance()
    {
        static const MulTable t;
        return t;
    }
};

inline const std::array<double, 256>& value_table()
{
    static const std::array<double, 256> t = [] {
        std::array<double, 256> v{};
        for (int i = 0; i < 256; ++i) v[i] = to_double(PositWord{static_cast<std::uint8_t>(i)});
        return v;
    }();
    return t;
}

// Running mix of operation modes, for the analytic mean-PE-cells figure.
struct ModeMix {
    std::array<std::uint64_t, 3> counts{};

    void add(int mode) { ++counts[mode]; }
    std::uint64_t total() const { return counts[0] + counts[1] + counts[2]; }
    double fraction(int mode) const
    {
        const auto t = total();
        return t == 0 ? 0.0 : static_cast<double>(counts[mode]) / static_cast<double>(t);
    }
    double mean_pe_cells() const
    {
        return 16.0 * fraction(0) + 9.0 * fraction(1) + 4.0 * fraction(2);
    }
};

} // namespace dspe::posit
