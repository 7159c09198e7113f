#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mtn/error.hpp"
#include "mtn/nn.hpp"
#include "mtn/tensor.hpp"

namespace mtn {

inline constexpr double kMaskFill = -1e9;

// Boolean attendability matrix (query rows x key columns). Every query row
// must keep at least one attendable key.
struct AttentionMask {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<uint8_t> attendable;  // row-major

    static AttentionMask causal(int64_t len) {
        if (len < 1) throw ContractError("causal mask length must be >= 1");
        AttentionMask m{len, len, std::vector<uint8_t>(static_cast<size_t>(len * len), 0)};
        for (int64_t i = 0; i < len; ++i)
            for (int64_t j = 0; j <= i; ++j) m.attendable[static_cast<size_t>(i * len + j)] = 1;
        return m;
    }

    bool at(int64_t i, int64_t j) const { return attendable[static_cast<size_t>(i * cols + j)] != 0; }

    void validate() const {
        for (int64_t i = 0; i < rows; ++i) {
            bool any = false;
            for (int64_t j = 0; j < cols && !any; ++j) any = at(i, j);
            if (!any)
                throw ContractError("attention mask row " + std::to_string(i) +
                                    " has no attendable key");
        }
    }

    // Additive pre-softmax bias: 0 where attendable, a large negative fill
    // otherwise.
    template <typename T>
    TensorT<T> bias() const {
        std::vector<T> b(attendable.size());
        for (size_t i = 0; i < attendable.size(); ++i)
            b[i] = attendable[i] ? T(0) : static_cast<T>(kMaskFill);
        return TensorT<T>::from_data({rows, cols}, std::move(b));
    }
};

// Sinusoid table: PE(pos, 2i) = sin(pos / 10000^(2i/d)),
// PE(pos, 2i+1) = cos(pos / 10000^(2i/d)).
template <typename T>
struct PositionalTableT {
    int64_t max_len = 0;
    int64_t d = 0;
    std::vector<T> table;  // max_len x d

    PositionalTableT() = default;
    PositionalTableT(int64_t max_len_, int64_t d_) : max_len(max_len_), d(d_) {
        if (d % 2 != 0) throw ContractError("positional encoding requires an even model width");
        if (max_len < 1) throw ContractError("positional table length must be >= 1");
        table.resize(static_cast<size_t>(max_len * d));
        for (int64_t pos = 0; pos < max_len; ++pos)
            for (int64_t i = 0; i < d / 2; ++i) {
                const double angle =
                    static_cast<double>(pos) /
                    std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d));
                table[static_cast<size_t>(pos * d + 2 * i)] = static_cast<T>(std::sin(angle));
                table[static_cast<size_t>(pos * d + 2 * i + 1)] = static_cast<T>(std::cos(angle));
            }
    }

    // First `len` rows as a constant tensor; the table regrows on demand.
    TensorT<T> prefix(int64_t len) {
        if (len > max_len) *this = PositionalTableT(std::max(len, max_len * 2), d);
        return TensorT<T>::from_data({len, d},
                                     std::vector<T>(table.begin(), table.begin() + len * d));
    }
};

inline AttentionMask causal_mask(int64_t len) { return AttentionMask::causal(len); }

struct AttnDropout {
    double p = 0.0;
    bool training = false;
    std::mt19937* rng = nullptr;
};

// softmax(q k^T / sqrt(d_k)) v with an optional additive mask fill applied
// before the softmax. Returns the attended output and the weight matrix.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> scaled_dot_attention(const TensorT<T>& q, const TensorT<T>& k,
                                                       const TensorT<T>& v,
                                                       const AttentionMask* mask = nullptr,
                                                       const AttnDropout& drop = {}) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw ShapeError("attention operands must be rank 2");
    const int64_t dk = q.shape().back();
    if (k.shape().back() != dk)
        throw ShapeError("query/key widths disagree: " + shape_str(q.shape()) + " vs " +
                         shape_str(k.shape()));
    if (k.dim(0) != v.dim(0))
        throw ShapeError("key/value row counts disagree: " + shape_str(k.shape()) + " vs " +
                         shape_str(v.shape()));
    auto scores = scale(matmul_nt(q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk))));
    if (mask) {
        if (mask->rows != q.dim(0) || mask->cols != k.dim(0))
            throw ShapeError("mask " + std::to_string(mask->rows) + "x" + std::to_string(mask->cols) +
                             " does not cover " + std::to_string(q.dim(0)) + " queries x " +
                             std::to_string(k.dim(0)) + " keys");
        mask->validate();
        scores = add(scores, mask->bias<T>());
    }
    auto weights = softmax(scores, -1);
    auto applied = weights;
    if (drop.training && drop.p > 0 && drop.rng)
        applied = dropout(weights, static_cast<T>(drop.p), true, *drop.rng);
    return {matmul(applied, v), weights};
}

// Multi-head attention. The per-head projections live as column blocks of
// d x d matrices: head i reads columns [i*d_k, (i+1)*d_k).
template <typename T>
struct MultiHeadAttentionT {
    LinearT<T> wq, wk, wv, wo;
    int64_t heads = 1;
    int64_t d = 0;

    MultiHeadAttentionT() = default;
    MultiHeadAttentionT(int64_t d_, int64_t heads_, std::mt19937& rng) : heads(heads_), d(d_) {
        if (heads < 1 || d % heads != 0)
            throw ContractError("head count " + std::to_string(heads_) +
                                " must divide model width " + std::to_string(d_));
        wq = LinearT<T>(d, d, rng, /*bias=*/false);
        wk = LinearT<T>(d, d, rng, /*bias=*/false);
        wv = LinearT<T>(d, d, rng, /*bias=*/false);
        wo = LinearT<T>(d, d, rng, /*bias=*/false);
    }

    TensorT<T> forward(const TensorT<T>& query_in, const TensorT<T>& kv_in,
                       const AttentionMask* mask = nullptr, const AttnDropout& drop = {}) const {
        if (query_in.shape().back() != d || kv_in.shape().back() != d)
            throw ShapeError("multi_head inputs must have width " + std::to_string(d));
        auto q = wq.forward(query_in);
        auto k = wk.forward(kv_in);
        auto v = wv.forward(kv_in);
        const int64_t dk = d / heads;
        std::vector<TensorT<T>> outs;
        outs.reserve(static_cast<size_t>(heads));
        for (int64_t h = 0; h < heads; ++h) {
            auto qh = slice_lastdim(q, h * dk, (h + 1) * dk);
            auto kh = slice_lastdim(k, h * dk, (h + 1) * dk);
            auto vh = slice_lastdim(v, h * dk, (h + 1) * dk);
            outs.push_back(scaled_dot_attention(qh, kh, vh, mask, drop).first);
        }
        return wo.forward(concat_lastdim(outs));
    }

    void collect(const std::string& prefix, ParamRegistry<T>& out) {
        wq.collect(prefix + ".wq", out);
        wk.collect(prefix + ".wk", out);
        wv.collect(prefix + ".wv", out);
        wo.collect(prefix + ".wo", out);
    }
};

// Position-wise feed-forward: w2 * relu(w1 * x + b1) + b2.
template <typename T>
struct FeedForwardT {
    LinearT<T> w1, w2;

    FeedForwardT() = default;
    FeedForwardT(int64_t d, int64_t d_ff, std::mt19937& rng) {
        w1 = LinearT<T>(d, d_ff, rng);
        w2 = LinearT<T>(d_ff, d, rng);
    }

    TensorT<T> forward(const TensorT<T>& x) const { return w2.forward(relu(w1.forward(x))); }

    void collect(const std::string& prefix, ParamRegistry<T>& out) {
        w1.collect(prefix + ".w1", out);
        w2.collect(prefix + ".w2", out);
    }
};

struct SublayerCtx {
    double dropout_p = 0.0;
    bool training = false;
    std::mt19937* rng = nullptr;
};

// Post-norm residual wrapper: layer_norm(x + dropout(inner(x))).
template <typename T>
TensorT<T> sublayer(const TensorT<T>& x, const std::function<TensorT<T>(const TensorT<T>&)>& inner,
                    const LayerNormT<T>& norm, const SublayerCtx& ctx = {}) {
    auto y = inner(x);
    if (y.shape() != x.shape())
        throw ShapeError("sublayer inner function changed shape from " + shape_str(x.shape()) +
                         " to " + shape_str(y.shape()));
    if (ctx.training && ctx.dropout_p > 0 && ctx.rng)
        y = dropout(y, static_cast<T>(ctx.dropout_p), true, *ctx.rng);
    return norm.forward(add(x, y));
}

// One attention sub-layer: multi-head attention followed by its own
// position-wise feed-forward, each wrapped post-norm.
template <typename T>
struct AttentionSubLayerT {
    MultiHeadAttentionT<T> attn;
    LayerNormT<T> norm_attn;
    FeedForwardT<T> ff;
    LayerNormT<T> norm_ff;

    AttentionSubLayerT() = default;
    AttentionSubLayerT(int64_t d, int64_t heads, int64_t d_ff, std::mt19937& rng)
        : attn(d, heads, rng), norm_attn(d), ff(d, d_ff, rng), norm_ff(d) {}

    TensorT<T> forward(const TensorT<T>& x, const TensorT<T>& kv,
                       const AttentionMask* mask = nullptr, const SublayerCtx& ctx = {}) const {
        AttnDropout drop{ctx.dropout_p, ctx.training, ctx.rng};
        auto h = sublayer<T>(
            x, [&](const TensorT<T>& q) { return attn.forward(q, kv, mask, drop); }, norm_attn, ctx);
        return sublayer<T>(
            h, [&](const TensorT<T>& z) { return ff.forward(z); }, norm_ff, ctx);
    }

    void collect(const std::string& prefix, ParamRegistry<T>& out) {
        attn.collect(prefix + ".attn", out);
        norm_attn.collect(prefix + ".norm_attn", out);
        ff.collect(prefix + ".ff", out);
        norm_ff.collect(prefix + ".norm_ff", out);
    }
};

}  // namespace mtn
