#pragma once

// Merkle-tree incremental pruning.
//
// Each token input is projected to V_low and split into leaf segments. Every node
// carries two hashes: an integrity hash (FNV-1a over little-endian float32 bytes
// at the leaves, FNV-1a over the two child hashes above) and a 32-bit SimHash
// locality hash of the segment it covers, with one set of hyperplanes per level.
// Levels are built bottom-up and compared against reference trees as they go;
// the first level that allows a skip or a reuse stops construction.

#include "dspe/ledger.hpp"
#include "dspe/model.hpp"
#include "dspe/rng.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <list>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dspe::mips {

inline std::uint32_t fnv1a32(const unsigned char* p, std::size_t n, std::uint32_t h = 0x811C9DC5u)
{
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x01000193u;
    }
    return h;
}

inline std::uint32_t hash_floats(const float* v, std::size_t n)
{
    std::uint32_t h = 0x811C9DC5u;
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t u;
        std::memcpy(&u, &v[i], 4);
        const unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                                    static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
        h = fnv1a32(b, 4, h);
    }
    return h;
}

inline std::uint32_t mix(std::uint32_t left, std::uint32_t right)
{
    const unsigned char b[8] = {static_cast<unsigned char>(left),        static_cast<unsigned char>(left >> 8),
                                static_cast<unsigned char>(left >> 16),  static_cast<unsigned char>(left >> 24),
                                static_cast<unsigned char>(right),       static_cast<unsigned char>(right >> 8),
                                static_cast<unsigned char>(right >> 16), static_cast<unsigned char>(right >> 24)};
    return fnv1a32(b, 8);
}

inline int delta_h(std::uint32_t a, std::uint32_t b) { return std::popcount(a ^ b); }

// ---------------------------------------------------------------------------
// Sorter

class SortedWindow {
public:
    struct Entry {
        int id;
        Vec v;
        double norm;
    };

    struct Insert {
        std::size_t position = 0;
        int neighbour = -1;
        double cos = 0.0;
        std::size_t computed = 0; // new cosine evaluations
        int evicted = -1;
    };

    explicit SortedWindow(std::size_t capacity = 256) : capacity_(capacity == 0 ? 1 : capacity) {}

    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t cache_size() const { return cache_.size(); }
    std::size_t evaluations() const { return evaluations_; }
    const std::vector<int>& retired() const { return retired_; }

    std::optional<double> cached(int a, int b) const
    {
        auto it = cache_.find(key(a, b));
        if (it == cache_.end()) return std::nullopt;
        return it->second;
    }

    Insert insert(int id, Vec v)
    {
        Insert r;
        if (entries_.size() >= capacity_) r.evicted = evict_oldest();
        double n2 = 0.0;
        for (double x : v) n2 += x * x;
        const double norm = std::sqrt(n2);
        std::size_t best_pos = entries_.size();
        double best = 0.0;
        bool found = false;
        for (std::size_t p = 0; p < entries_.size(); ++p) {
            const auto& e = entries_[p];
            double c;
            if (auto hit = cached(id, e.id)) {
                c = *hit;
            } else {
                c = cos_with(v, norm, e);
                cache_[key(id, e.id)] = c;
                ++r.computed;
                ++evaluations_;
            }
            if (norm > 0.0 && e.norm > 0.0 && (!found || c > best)) {
                best = c;
                best_pos = p;
                found = true;
            }
        }
        if (found) {
            r.neighbour = entries_[best_pos].id;
            r.cos = best;
            r.position = best_pos + 1;
        } else {
            r.position = entries_.size();
        }
        entries_.insert(entries_.begin() + static_cast<std::ptrdiff_t>(r.position), Entry{id, std::move(v), norm});
        arrival_.push_back(id);
        return r;
    }

    // Processing order: tokens evicted so far, then the current window.
    std::vector<int> order() const
    {
        std::vector<int> out = retired_;
        for (const auto& e : entries_) out.push_back(e.id);
        return out;
    }

private:
    static std::uint64_t key(int a, int b)
    {
        if (a > b) std::swap(a, b);
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
    }

    static double cos_with(const Vec& v, double norm, const Entry& e)
    {
        if (norm == 0.0 || e.norm == 0.0) return 0.0;
        double dot = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * e.v[i];
        return dot / (norm * e.norm);
    }

    int evict_oldest()
    {
        const int id = arrival_.front();
        arrival_.erase(arrival_.begin());
        for (auto it = entries_.begin(); it != entries_.end(); ++it) {
            if (it->id == id) {
                entries_.erase(it);
                break;
            }
        }
        for (auto it = cache_.begin(); it != cache_.end();) {
            const auto a = static_cast<int>(it->first >> 32), b = static_cast<int>(it->first & 0xFFFFFFFFu);
            it = (a == id || b == id) ? cache_.erase(it) : std::next(it);
        }
        retired_.push_back(id);
        return id;
    }

    std::size_t capacity_;
    std::vector<Entry> entries_;
    std::vector<int> arrival_;
    std::vector<int> retired_;
    std::unordered_map<std::uint64_t, double> cache_;
    std::size_t evaluations_ = 0;
};

// ---------------------------------------------------------------------------
// Hashing

struct MerkleNode {
    int level = 0;
    int index = 0;
    std::uint32_t integrity = 0;
    std::uint32_t locality = 0;
    int seg_begin = 0;
    int seg_len = 0;
};

struct TreeShape {
    int d_model = 64;
    int d_low = 32;
    int leaves = 8;

    int leaf_width() const { return d_low / leaves; }
    int levels() const
    {
        int n = leaves, l = 1;
        while (n > 1) {
            n = (n + 1) / 2;
            ++l;
        }
        return l;
    }
};

class Hasher {
public:
    Hasher(const TreeShape& shape, std::uint64_t seed) : shape_(shape)
    {
        if (shape.d_low < 1 || shape.leaves < 1 || shape.d_low % shape.leaves != 0) {
            throw ConfigError("d_low must be a positive multiple of the leaf count");
        }
        if (shape.d_model < 1) throw ConfigError("d_model must be positive");
        Rng rng(derive_seed(seed, 0x70726F6Aull));
        projection_ = Matrix(static_cast<std::size_t>(shape.d_model), static_cast<std::size_t>(shape.d_low));
        const double s = 1.0 / std::sqrt(static_cast<double>(shape.d_low));
        for (double& x : projection_.data) x = s * rng.normal();
        // Widest segment at each level; shorter (promoted-tail) segments use a prefix.
        Rng hp(derive_seed(seed, 0x706C616E6573ull));
        int width = shape.leaf_width();
        for (int l = 0; l < shape.levels(); ++l) {
            Matrix planes(32, static_cast<std::size_t>(std::min(width, shape.d_low)));
            for (double& x : planes.data) x = hp.normal();
            planes_.push_back(std::move(planes));
            width *= 2;
        }
    }

    Hasher(const TreeShape& shape, Matrix projection, std::vector<Matrix> planes)
        : shape_(shape), projection_(std::move(projection)), planes_(std::move(planes))
    {
    }

    const TreeShape& shape() const { return shape_; }
    const Matrix& projection() const { return projection_; }

    // V_low = P^T v, stored as float32 so integrity hashes see canonical bytes.
    std::vector<float> project_low(const Vec& v) const
    {
        if (v.size() != projection_.rows) throw ConfigError("projection input width mismatch");
        std::vector<float> out(projection_.cols);
        for (std::size_t j = 0; j < projection_.cols; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < projection_.rows; ++i) acc += projection_(i, j) * v[i];
            out[j] = static_cast<float>(acc);
        }
        return out;
    }

    std::uint64_t projection_macs() const { return projection_.rows * projection_.cols; }

    std::uint32_t simhash(int level, const float* seg, int len) const
    {
        const auto& p = planes_[static_cast<std::size_t>(level)];
        std::uint32_t h = 0;
        for (std::size_t j = 0; j < 32; ++j) {
            double dot = 0.0;
            for (int i = 0; i < len; ++i) dot += p(j, static_cast<std::size_t>(i)) * seg[i];
            if (dot > 0.0) h |= 1u << j;
        }
        return h;
    }

    std::vector<MerkleNode> leaf_hashes(const std::vector<float>& vlow) const
    {
        const int w = shape_.leaf_width();
        std::vector<MerkleNode> out;
        for (int i = 0; i < shape_.leaves; ++i) {
            const float* seg = vlow.data() + i * w;
            out.push_back({0, i, hash_floats(seg, static_cast<std::size_t>(w)), simhash(0, seg, w), i * w, w});
        }
        return out;
    }

    std::vector<MerkleNode> build_level(const std::vector<MerkleNode>& children, const std::vector<float>& vlow) const
    {
        std::vector<MerkleNode> out;
        const int level = children.front().level + 1;
        for (std::size_t i = 0; i < children.size(); i += 2) {
            if (i + 1 == children.size()) {
                MerkleNode promoted = children[i];
                promoted.level = level;
                promoted.index = static_cast<int>(i / 2);
                out.push_back(promoted);
                continue;
            }
            const auto& l = children[i];
            const auto& r = children[i + 1];
            MerkleNode n;
            n.level = level;
            n.index = static_cast<int>(i / 2);
            n.integrity = mix(l.integrity, r.integrity);
            n.seg_begin = l.seg_begin;
            n.seg_len = l.seg_len + r.seg_len;
            n.locality = simhash(level, vlow.data() + n.seg_begin, n.seg_len);
            out.push_back(n);
        }
        return out;
    }

    std::uint64_t level_macs(const std::vector<MerkleNode>& nodes) const
    {
        std::uint64_t n = 0;
        for (const auto& nd : nodes) n += 32u * static_cast<std::uint64_t>(nd.seg_len);
        return n;
    }

private:
    TreeShape shape_;
    Matrix projection_;
    std::vector<Matrix> planes_;
};

// A tree under construction. Levels are appended one at a time.
struct Tree {
    std::vector<float> vlow;
    std::vector<std::vector<MerkleNode>> levels;

    bool complete(int total_levels) const { return static_cast<int>(levels.size()) >= total_levels; }
    const MerkleNode& root() const { return levels.back().front(); }
};

inline Tree start_tree(const Hasher& h, const Vec& x, CostLedger* ledger = nullptr)
{
    Tree t;
    t.vlow = h.project_low(x);
    if (ledger) ledger->overhead_macs += h.projection_macs();
    return t;
}

// Builds the next level; returns false when the root already exists.
inline bool grow(const Hasher& h, Tree& t, CostLedger* ledger = nullptr)
{
    if (t.complete(h.shape().levels())) return false;
    if (t.levels.empty()) {
        t.levels.push_back(h.leaf_hashes(t.vlow));
    } else {
        t.levels.push_back(h.build_level(t.levels.back(), t.vlow));
    }
    if (ledger) ledger->overhead_macs += h.level_macs(t.levels.back());
    return true;
}

inline Tree build_tree(const Hasher& h, const Vec& x, CostLedger* ledger = nullptr)
{
    Tree t = start_tree(h, x, ledger);
    while (grow(h, t, ledger)) {
    }
    return t;
}

// Level distance: the worst node-wise Hamming distance at that level.
inline int level_delta(const std::vector<MerkleNode>& a, const std::vector<MerkleNode>& b)
{
    int worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, delta_h(a[i].locality, b[i].locality));
    return worst;
}

inline bool level_integrity_equal(const std::vector<MerkleNode>& a, const std::vector<MerkleNode>& b)
{
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].integrity != b[i].integrity) return false;
    }
    return true;
}

inline std::uint64_t level_pattern(const std::vector<MerkleNode>& a, const std::vector<MerkleNode>& b)
{
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const std::uint32_t x = a[i].locality ^ b[i].locality;
        h = fnv1a64(&x, 4, h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// History-LUT

class HistoryLut {
public:
    struct Key {
        int level;
        std::uint64_t pattern;
        int ref;
        auto operator<=>(const Key&) const = default;
    };

    HistoryLut(int levels, std::size_t capacity_per_level) : capacity_(capacity_per_level), levels_(static_cast<std::size_t>(levels))
    {
    }

    std::optional<int> lookup(const Key& k)
    {
        auto& lv = levels_[static_cast<std::size_t>(k.level)];
        auto it = lv.index.find(k);
        if (it == lv.index.end()) return std::nullopt;
        lv.order.splice(lv.order.begin(), lv.order, it->second);
        return it->second->second;
    }

    void insert(const Key& k, int result)
    {
        if (capacity_ == 0) return;
        auto& lv = levels_[static_cast<std::size_t>(k.level)];
        if (auto it = lv.index.find(k); it != lv.index.end()) {
            it->second->second = result;
            lv.order.splice(lv.order.begin(), lv.order, it->second);
            return;
        }
        if (lv.order.size() >= capacity_) {
            lv.index.erase(lv.order.back().first);
            lv.order.pop_back();
        }
        lv.order.emplace_front(k, result);
        lv.index[k] = lv.order.begin();
    }

    std::size_t size(int level) const { return levels_[static_cast<std::size_t>(level)].order.size(); }

private:
    struct Level {
        std::list<std::pair<Key, int>> order; // most recent first
        std::map<Key, std::list<std::pair<Key, int>>::iterator> index;
    };
    std::size_t capacity_;
    std::vector<Level> levels_;
};

// ---------------------------------------------------------------------------
// Decisions

enum class Kind { EarlySkip, DiffReuse, FullCompute };

inline const char* to_string(Kind k)
{
    switch (k) {
    case Kind::EarlySkip: return "early_skip";
    case Kind::DiffReuse: return "diff_reuse";
    default: return "full_compute";
    }
}

struct Thresholds {
    int t_zero = 1;
    int s_th = 4;
    bool integrity_gate = false;
};

struct Decision {
    Kind kind = Kind::FullCompute;
    int level = -1;
    int delta_h = -1;
    int ref = -1;    // reference token compared against
    int result = -1; // token whose result is reused
};

struct Reference {
    int id;
    const Tree* tree;
};

// Walks up the tree, growing it as needed. At each level the reference with the
// smallest distance is taken; ties keep the earlier candidate.
inline Decision decide(const Hasher& h, Tree& cur, const std::vector<Reference>& refs, HistoryLut& lut,
                       const Thresholds& th, CostLedger* ledger = nullptr)
{
    Decision d;
    const int total = h.shape().levels();
    for (int level = 0; level < total; ++level) {
        if (static_cast<int>(cur.levels.size()) <= level) grow(h, cur, ledger);
        const auto& mine = cur.levels[static_cast<std::size_t>(level)];
        int best = -1, best_dh = 0;
        for (std::size_t r = 0; r < refs.size(); ++r) {
            if (static_cast<int>(refs[r].tree->levels.size()) <= level) continue;
            const int dh = level_delta(mine, refs[r].tree->levels[static_cast<std::size_t>(level)]);
            if (best < 0 || dh < best_dh) {
                best = static_cast<int>(r);
                best_dh = dh;
            }
        }
        if (best < 0) continue;
        const auto& theirs = refs[static_cast<std::size_t>(best)].tree->levels[static_cast<std::size_t>(level)];
        d.level = level;
        d.delta_h = best_dh;
        d.ref = refs[static_cast<std::size_t>(best)].id;
        if (best_dh <= th.t_zero && (!th.integrity_gate || level_integrity_equal(mine, theirs))) {
            d.kind = Kind::EarlySkip;
            d.result = d.ref;
            return d;
        }
        if (best_dh > th.t_zero && best_dh <= th.s_th) {
            if (auto hit = lut.lookup({level, level_pattern(mine, theirs), d.ref})) {
                d.kind = Kind::DiffReuse;
                d.result = *hit;
                return d;
            }
        }
    }
    while (grow(h, cur, ledger)) {
    }
    d.kind = Kind::FullCompute;
    d.result = -1;
    return d;
}

// After a full compute: every level whose best-reference distance lies in
// (T_zero, S_th] records its pattern so a later match can reuse this result.
inline int register_result(const Tree& cur, const std::vector<Reference>& refs, HistoryLut& lut, const Thresholds& th,
                           int result)
{
    int registered = 0;
    for (std::size_t level = 0; level < cur.levels.size(); ++level) {
        int best = -1, best_dh = 0;
        for (std::size_t r = 0; r < refs.size(); ++r) {
            if (refs[r].tree->levels.size() <= level) continue;
            const int dh = level_delta(cur.levels[level], refs[r].tree->levels[level]);
            if (best < 0 || dh < best_dh) {
                best = static_cast<int>(r);
                best_dh = dh;
            }
        }
        if (best < 0 || best_dh <= th.t_zero || best_dh > th.s_th) continue;
        const auto& ref = refs[static_cast<std::size_t>(best)];
        lut.insert({static_cast<int>(level), level_pattern(cur.levels[level], ref.tree->levels[level]), ref.id}, result);
        ++registered;
    }
    return registered;
}

// The decision the root level alone would have made against the same reference.
inline Kind root_decision(const Tree& cur, const Tree& ref, const Thresholds& th)
{
    const auto& a = cur.levels.back();
    const auto& b = ref.levels.back();
    const int dh = level_delta(a, b);
    if (dh <= th.t_zero && (!th.integrity_gate || level_integrity_equal(a, b))) return Kind::EarlySkip;
    if (dh <= th.s_th) return Kind::DiffReuse;
    return Kind::FullCompute;
}

} // namespace dspe::mips
