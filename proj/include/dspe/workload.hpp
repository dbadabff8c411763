#pragma once

// Synthetic token traces and the binary tensor format.
//
// Tensor file layout (all little-endian):
//   "DSPE" | version u8 | rank u8 | dims u32 x rank | payload f32 x prod(dims), row-major

#include "dspe/posit.hpp"
#include "dspe/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace dspe {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xCBF29CE484222325ull)
{
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return s;
}

// ---------------------------------------------------------------------------
// Traces

struct TraceSpec {
    std::uint64_t seed = 1;
    int length = 64;
    int d_model = 64;
    double rho = 0.9;
    double duplicate_rate = 0.0;
    double near_zero_rate = 0.0;

    void validate() const
    {
        if (length < 1) throw ConfigError("trace length must be >= 1");
        if (d_model < 1) throw ConfigError("trace d_model must be >= 1");
        auto unit = [](double x, const char* name) {
            if (!(x >= 0.0 && x <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
        };
        unit(rho, "rho");
        unit(duplicate_rate, "duplicate_rate");
        unit(near_zero_rate, "near_zero_rate");
    }
};

inline void to_json(nlohmann::ordered_json& j, const TraceSpec& s)
{
    j = nlohmann::ordered_json{{"seed", s.seed},       {"length", s.length},
                               {"d_model", s.d_model}, {"rho", s.rho},
                               {"duplicate_rate", s.duplicate_rate},
                               {"near_zero_rate", s.near_zero_rate}};
}

struct WorkloadTrace {
    TraceSpec spec;
    std::vector<std::vector<float>> tokens;
    std::vector<int> source; // index of the copied token, or -1

    std::uint64_t digest() const
    {
        std::uint64_t h = 0xCBF29CE484222325ull;
        for (const auto& t : tokens) {
            for (float x : t) {
                std::uint32_t u;
                std::memcpy(&u, &x, 4);
                const unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                                            static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
                h = fnv1a64(b, 4, h);
            }
        }
        return h;
    }

    nlohmann::ordered_json manifest() const
    {
        nlohmann::ordered_json j;
        j["spec"] = spec;
        j["tokens"] = tokens.size();
        j["digest"] = hex64(digest());
        return j;
    }
};

// Latent AR(1) process z_t = rho * z_{t-1} + sqrt(1 - rho^2) * n_t. Each emitted
// token is either an exact copy of a random earlier emitted token (probability d)
// or z_t with elements zeroed at rate z. Every step consumes the same draws
// regardless of the outcome, so two specs differing only in d share the latent
// sequence and the duplicate positions for the smaller d are a subset.
inline WorkloadTrace generate_trace(const TraceSpec& spec)
{
    spec.validate();
    WorkloadTrace tr;
    tr.spec = spec;
    Rng rng(derive_seed(spec.seed, 0x7472616365ull));
    const auto n = static_cast<std::size_t>(spec.d_model);
    const double innov = std::sqrt(1.0 - spec.rho * spec.rho);
    std::vector<double> z(n, 0.0);
    for (int t = 0; t < spec.length; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            const double e = rng.normal();
            z[i] = t == 0 ? e : spec.rho * z[i] + innov * e;
        }
        const double u_dup = rng.uniform01();
        const auto pick = static_cast<int>(rng.index(static_cast<std::uint64_t>(t > 0 ? t : 1)));
        std::vector<float> tok(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double u_zero = rng.uniform01();
            tok[i] = u_zero < spec.near_zero_rate ? 0.0f : static_cast<float>(z[i]);
        }
        if (t > 0 && u_dup < spec.duplicate_rate) {
            tr.tokens.push_back(tr.tokens[static_cast<std::size_t>(pick)]);
            tr.source.push_back(pick);
        } else {
            tr.tokens.push_back(std::move(tok));
            tr.source.push_back(-1);
        }
    }
    return tr;
}

// Operand pairs for the posit multiplier. Each operand is drawn from the mode-2
// patterns with probability p2, else uniformly from all finite nonzero patterns.
inline std::vector<std::pair<std::uint8_t, std::uint8_t>> posit_operand_trace(std::uint64_t seed, std::size_t count,
                                                                              double p2)
{
    std::vector<std::uint8_t> mode2, finite;
    for (int b = 0; b < 256; ++b) {
        const posit::PositWord w{static_cast<std::uint8_t>(b)};
        if (b == posit::kZero || b == posit::kNaR) continue;
        finite.push_back(static_cast<std::uint8_t>(b));
        if (posit::detect_mode(w).mode == 2) mode2.push_back(static_cast<std::uint8_t>(b));
    }
    Rng rng(derive_seed(seed, 0x706169727300ull));
    auto draw = [&] {
        const bool m2 = rng.uniform01() < p2;
        const auto& pool = m2 ? mode2 : finite;
        return pool[rng.index(pool.size())];
    };
    std::vector<std::pair<std::uint8_t, std::uint8_t>> out(count);
    for (auto& pr : out) {
        pr.first = draw();
        pr.second = draw();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tensor files

struct Tensor {
    std::vector<std::uint32_t> dims;
    std::vector<float> data;

    std::size_t size() const
    {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

struct ParseError : std::runtime_error {
    std::size_t offset;
    ParseError(const std::string& what, std::size_t at)
        : std::runtime_error(what + " at byte " + std::to_string(at)), offset(at)
    {
    }
};

inline constexpr std::uint8_t kTensorVersion = 1;

inline std::vector<std::uint8_t> serialize_tensor(const Tensor& t)
{
    if (t.dims.size() > 255) throw ConfigError("tensor rank exceeds 255");
    if (t.data.size() != t.size()) throw ConfigError("tensor payload does not match dims");
    std::vector<std::uint8_t> out{'D', 'S', 'P', 'E', kTensorVersion, static_cast<std::uint8_t>(t.dims.size())};
    auto put32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    for (auto d : t.dims) put32(d);
    for (float x : t.data) {
        std::uint32_t u;
        std::memcpy(&u, &x, 4);
        put32(u);
    }
    return out;
}

inline Tensor parse_tensor(const std::vector<std::uint8_t>& buf)
{
    std::size_t pos = 0;
    auto need = [&](std::size_t n, const char* what) {
        if (buf.size() - pos < n) throw ParseError(std::string("truncated ") + what, pos);
    };
    need(4, "magic");
    if (std::memcmp(buf.data(), "DSPE", 4) != 0) throw ParseError("bad magic", 0);
    pos = 4;
    need(2, "header");
    if (buf[pos] != kTensorVersion) throw ParseError("unsupported version " + std::to_string(buf[pos]), pos);
    const int rank = buf[pos + 1];
    pos += 2;
    auto get32 = [&] {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + static_cast<std::size_t>(i)]) << (8 * i);
        pos += 4;
        return v;
    };
    Tensor t;
    std::uint64_t count = 1;
    for (int r = 0; r < rank; ++r) {
        need(4, "dims");
        const std::size_t at = pos;
        const auto d = get32();
        count *= d;
        if (count > (std::numeric_limits<std::uint32_t>::max)()) throw ParseError("dim overflow", at);
        t.dims.push_back(d);
    }
    if ((buf.size() - pos) / 4 < count) throw ParseError("truncated payload", pos);
    t.data.resize(static_cast<std::size_t>(count));
    for (auto& x : t.data) {
        const auto u = get32();
        std::memcpy(&x, &u, 4);
    }
    if (pos != buf.size()) throw ParseError("trailing bytes", pos);
    return t;
}

inline void save_tensor(const std::string& path, const Tensor& t)
{
    const auto bytes = serialize_tensor(t);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

inline Tensor load_tensor(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_tensor(buf);
}

inline Tensor trace_tensor(const WorkloadTrace& tr)
{
    Tensor t;
    t.dims = {static_cast<std::uint32_t>(tr.tokens.size()), static_cast<std::uint32_t>(tr.spec.d_model)};
    for (const auto& tok : tr.tokens) t.data.insert(t.data.end(), tok.begin(), tok.end());
    return t;
}

} // namespace dspe
