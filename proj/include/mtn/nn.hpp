#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mtn/tensor.hpp"

namespace mtn {

// Named views into a model's trainable tensors, in registration order. The
// order is stable for a given config and defines the checkpoint layout.
template <typename T>
using ParamRegistry = std::vector<std::pair<std::string, TensorT<T>*>>;

template <typename T>
struct LinearT {
    TensorT<T> w;  // in x out
    TensorT<T> b;  // out, absent when bias-free
    bool has_bias = true;

    LinearT() = default;
    LinearT(int64_t in, int64_t out, std::mt19937& rng, bool bias = true) : has_bias(bias) {
        w = TensorT<T>::xavier(in, out, rng).set_requires_grad(true);
        if (bias) b = TensorT<T>::zeros({out}).set_requires_grad(true);
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        auto y = matmul(x, w);
        return has_bias ? add(y, b) : y;
    }

    void collect(const std::string& prefix, ParamRegistry<T>& out) {
        out.emplace_back(prefix + ".w", &w);
        if (has_bias) out.emplace_back(prefix + ".b", &b);
    }
};

template <typename T>
struct EmbeddingT {
    TensorT<T> weight;  // vocab x d

    EmbeddingT() = default;
    EmbeddingT(int64_t vocab, int64_t d, std::mt19937& rng) {
        weight = TensorT<T>::xavier(vocab, d, rng).set_requires_grad(true);
    }

    TensorT<T> forward(const std::vector<int32_t>& ids) const { return embedding(weight, ids); }

    void collect(const std::string& prefix, ParamRegistry<T>& out) {
        out.emplace_back(prefix + ".weight", &weight);
    }
};

template <typename T>
struct LayerNormT {
    TensorT<T> gain;
    TensorT<T> bias;
    T eps = T(1e-6);

    LayerNormT() = default;
    explicit LayerNormT(int64_t width) {
        gain = TensorT<T>::ones({width}).set_requires_grad(true);
        bias = TensorT<T>::zeros({width}).set_requires_grad(true);
    }

    TensorT<T> forward(const TensorT<T>& x) const { return layer_norm(x, gain, bias, eps); }

    void collect(const std::string& prefix, ParamRegistry<T>& out) {
        out.emplace_back(prefix + ".gain", &gain);
        out.emplace_back(prefix + ".bias", &bias);
    }
};

}  // namespace mtn
