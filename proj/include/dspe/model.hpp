#pragma once

// Toy parallel transformer block:
//   y = x + MLA(x) + sum_i g_i(x) FFN_i(x)
// MLA projects the concatenated heads through W^O (row-vector convention,
// out = concat . W^O). Every other weight is stored out x in and applied as W x.
// All sums run in ascending index order starting from 0.0.

#include "dspe/rng.hpp"
#include "dspe/workload.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

namespace dspe {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    static Matrix identity(std::size_t n)
    {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

using Vec = std::vector<double>;

inline Vec matvec(const Matrix& w, const Vec& x)
{
    if (w.cols != x.size()) throw ConfigError("matvec dimension mismatch");
    Vec y(w.rows, 0.0);
    for (std::size_t r = 0; r < w.rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < w.cols; ++c) acc += w(r, c) * x[c];
        y[r] = acc;
    }
    return y;
}

// In place, max-subtracted.
inline void softmax(Vec& s)
{
    if (s.empty()) return;
    const double m = *std::max_element(s.begin(), s.end());
    double sum = 0.0;
    for (double& v : s) {
        v = std::exp(v - m);
        sum += v;
    }
    for (double& v : s) v /= sum;
}

// Softmax(Q K^T / sqrt(d_k)) V.
inline Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t d_k)
{
    if (d_k == 0) throw ConfigError("attention needs d_k > 0");
    if (q.cols != k.cols || k.rows != v.rows) throw ConfigError("attention shape mismatch");
    const double scale = std::sqrt(static_cast<double>(d_k));
    Matrix out(q.rows, v.cols);
    for (std::size_t i = 0; i < q.rows; ++i) {
        Vec s(k.rows);
        for (std::size_t j = 0; j < k.rows; ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < q.cols; ++c) acc += q(i, c) * k(j, c);
            s[j] = acc / scale;
        }
        softmax(s);
        for (std::size_t c = 0; c < v.cols; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k.rows; ++j) acc += s[j] * v(j, c);
            out(i, c) = acc;
        }
    }
    return out;
}

struct Head {
    Matrix q, k, v;
};

// Concat(head_1..head_h) . W^O.
inline Matrix mla(const std::vector<Head>& heads, const Matrix& w_o)
{
    if (heads.empty()) throw ConfigError("mla needs at least one head");
    std::vector<Matrix> outs;
    std::size_t width = 0;
    for (const auto& h : heads) {
        outs.push_back(attention(h.q, h.k, h.v, h.q.cols));
        width += outs.back().cols;
    }
    if (w_o.rows != width) throw ConfigError("W^O rows must equal concatenated head width");
    const std::size_t n = outs.front().rows;
    Matrix out(n, w_o.cols);
    for (std::size_t t = 0; t < n; ++t) {
        Vec cat;
        for (const auto& o : outs) cat.insert(cat.end(), o.data.begin() + static_cast<std::ptrdiff_t>(t * o.cols),
                                              o.data.begin() + static_cast<std::ptrdiff_t>((t + 1) * o.cols));
        for (std::size_t j = 0; j < w_o.cols; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < width; ++i) acc += cat[i] * w_o(i, j);
            out(t, j) = acc;
        }
    }
    return out;
}

// Top-k of the logits (ties to the lower index), softmax over the selected ones.
// Unselected experts get exactly 0.
inline Vec top_k_gate(const Vec& logits, std::size_t k)
{
    if (k > logits.size()) throw ConfigError("top_k exceeds expert count");
    std::vector<std::size_t> idx(logits.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    Vec sel;
    for (auto i : idx) sel.push_back(logits[i]);
    softmax(sel);
    Vec g(logits.size(), 0.0);
    for (std::size_t t = 0; t < idx.size(); ++t) g[idx[t]] = sel[t];
    return g;
}

struct Expert {
    Matrix w1; // d_ff x d_model
    Matrix w2; // d_model x d_ff
};

inline Vec relu(Vec v)
{
    for (double& x : v) x = x > 0.0 ? x : 0.0;
    return v;
}

inline Vec expert_forward(const Expert& e, const Vec& x) { return matvec(e.w2, relu(matvec(e.w1, x))); }

struct MoeResult {
    Vec out;
    std::size_t experts_evaluated = 0;
};

// sum over nonzero gates of g_i FFN_i(x); experts with zero gate are never run.
inline MoeResult moe(const Vec& x, const Vec& gate, const std::vector<Expert>& experts)
{
    MoeResult r;
    if (experts.empty()) return r;
    r.out.assign(experts.front().w2.rows, 0.0);
    for (std::size_t i = 0; i < experts.size(); ++i) {
        if (gate[i] == 0.0) continue;
        const auto o = expert_forward(experts[i], x);
        for (std::size_t c = 0; c < o.size(); ++c) r.out[c] += gate[i] * o[c];
        ++r.experts_evaluated;
    }
    return r;
}

struct ModelDims {
    int d_model = 64;
    int heads = 4;
    int d_k = 16;
    int experts = 4;
    int top_k = 2;
    int d_ff = 128;

    void validate() const
    {
        if (d_model < 1 || heads < 1 || d_k < 1 || experts < 1 || d_ff < 1) throw ConfigError("model dims must be positive");
        if (heads * d_k != d_model) throw ConfigError("heads * d_k must equal d_model");
        if (top_k < 1 || top_k > experts) throw ConfigError("top_k must lie in [1, experts]");
    }
};

struct ToyModel {
    ModelDims dims;
    Matrix wq, wk, wv; // d_model x d_model
    Matrix wo;         // concat x d_model
    Matrix gate;       // experts x d_model
    std::vector<Expert> experts;

    static ToyModel random(const ModelDims& dims, std::uint64_t seed)
    {
        dims.validate();
        ToyModel m;
        m.dims = dims;
        Rng rng(derive_seed(seed, 0x6D6F64656Cull));
        auto fill = [&](std::size_t r, std::size_t c) {
            Matrix w(r, c);
            const double s = 1.0 / std::sqrt(static_cast<double>(c));
            for (double& x : w.data) x = s * rng.normal();
            return w;
        };
        const auto d = static_cast<std::size_t>(dims.d_model);
        const auto f = static_cast<std::size_t>(dims.d_ff);
        m.wq = fill(d, d);
        m.wk = fill(d, d);
        m.wv = fill(d, d);
        m.wo = fill(d, d);
        m.gate = fill(static_cast<std::size_t>(dims.experts), d);
        for (int e = 0; e < dims.experts; ++e) m.experts.push_back({fill(f, d), fill(d, f)});
        return m;
    }

    // Multiplies per decoded token at cache length n (the token itself included).
    std::uint64_t macs_per_token(std::uint64_t n) const
    {
        const std::uint64_t d = static_cast<std::uint64_t>(dims.d_model);
        const std::uint64_t e = static_cast<std::uint64_t>(dims.experts);
        const std::uint64_t k = static_cast<std::uint64_t>(dims.top_k);
        const std::uint64_t f = static_cast<std::uint64_t>(dims.d_ff);
        return 3 * d * d + e * d   // q, k, v, gate logits
             + 2 * d * n           // scores and probability-weighted values, all heads
             + d * d               // W^O
             + k * 2 * d * f       // routed experts
             + k * d;              // gate scaling
    }
};

// Token-by-token decode with a growing KV cache; the exact reference output.
inline std::vector<Vec> reference_forward(const ToyModel& m, const std::vector<std::vector<float>>& tokens)
{
    const auto d = static_cast<std::size_t>(m.dims.d_model);
    const auto dk = static_cast<std::size_t>(m.dims.d_k);
    const auto h = static_cast<std::size_t>(m.dims.heads);
    const double scale = std::sqrt(static_cast<double>(dk));
    std::vector<Vec> keys, values, out;
    for (const auto& tok : tokens) {
        if (tok.size() != d) throw ConfigError("token width does not match d_model");
        const Vec x(tok.begin(), tok.end());
        const Vec q = matvec(m.wq, x);
        keys.push_back(matvec(m.wk, x));
        values.push_back(matvec(m.wv, x));
        const Vec logits = matvec(m.gate, x);

        Vec cat(d, 0.0);
        for (std::size_t hd = 0; hd < h; ++hd) {
            const std::size_t off = hd * dk;
            Vec s(keys.size());
            for (std::size_t j = 0; j < keys.size(); ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < dk; ++c) acc += q[off + c] * keys[j][off + c];
                s[j] = acc / scale;
            }
            softmax(s);
            for (std::size_t c = 0; c < dk; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < values.size(); ++j) acc += s[j] * values[j][off + c];
                cat[off + c] = acc;
            }
        }
        Vec y(d);
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < d; ++i) acc += cat[i] * m.wo(i, j);
            y[j] = x[j] + acc;
        }
        const Vec g = top_k_gate(logits, static_cast<std::size_t>(m.dims.top_k));
        for (std::size_t e = 0; e < m.experts.size(); ++e) {
            if (g[e] == 0.0) continue;
            const Vec o = expert_forward(m.experts[e], x);
            for (std::size_t c = 0; c < d; ++c) y[c] += g[e] * o[c];
        }
        out.push_back(std::move(y));
    }
    return out;
}

inline double cosine(const Vec& a, const Vec& b)
{
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) return 0.0;
    return ab / std::sqrt(aa * bb);
}

} // namespace dspe
