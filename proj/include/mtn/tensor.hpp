#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mtn/error.hpp"
#include "mtn/kernels.hpp"

namespace mtn {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline void validate_shape(const Shape& s) {
    for (int64_t d : s)
        if (d <= 0) throw ShapeError("dimension sizes must be positive, got " + shape_str(s));
}

namespace autograd {

inline bool& grad_mode() {
    thread_local bool on = true;
    return on;
}

// Disables tape recording for the lifetime of the guard (inference paths).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

}  // namespace autograd

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

// Value-semantic handle over a shared autodiff node. Copying a TensorT
// aliases the underlying storage; clone() makes a detached deep copy.
template <typename T>
class TensorT {
  public:
    using Scalar = T;

    TensorT() = default;

    static TensorT zeros(Shape shape) {
        validate_shape(shape);
        const int64_t n = shape_numel(shape);
        return TensorT(std::make_shared<Node<T>>(Node<T>{std::move(shape), std::vector<T>(n, T(0))}));
    }

    static TensorT full(Shape shape, T v) {
        validate_shape(shape);
        const int64_t n = shape_numel(shape);
        return TensorT(std::make_shared<Node<T>>(Node<T>{std::move(shape), std::vector<T>(n, v)}));
    }

    static TensorT ones(Shape shape) { return full(std::move(shape), T(1)); }

    static TensorT scalar(T v) { return full({1}, v); }

    static TensorT from_data(Shape shape, std::vector<T> data) {
        validate_shape(shape);
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        return TensorT(std::make_shared<Node<T>>(Node<T>{std::move(shape), std::move(data)}));
    }

    static TensorT uniform(Shape shape, T lo, T hi, std::mt19937& rng) {
        validate_shape(shape);
        std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
        std::vector<T> data(shape_numel(shape));
        for (auto& v : data) v = static_cast<T>(dist(rng));
        return from_data(std::move(shape), std::move(data));
    }

    // Uniform Xavier/Glorot bound derived from the matrix dimensions.
    static TensorT xavier(int64_t fan_in, int64_t fan_out, std::mt19937& rng) {
        const T bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
        return uniform({fan_in, fan_out}, -bound, bound, rng);
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int64_t rank() const { return static_cast<int64_t>(n_->shape.size()); }
    int64_t dim(int64_t i) const { return n_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }

    std::vector<T>& value() { return n_->value; }
    const std::vector<T>& value() const { return n_->value; }
    T* data() { return n_->value.data(); }
    const T* data() const { return n_->value.data(); }

    T item() const {
        if (numel() != 1) throw ContractError("item() requires a scalar tensor, got " + shape_str(shape()));
        return n_->value[0];
    }

    T at(std::initializer_list<int64_t> idx) const {
        int64_t flat = 0;
        size_t i = 0;
        for (int64_t v : idx) flat = flat * n_->shape[i++] + v;
        return n_->value[static_cast<size_t>(flat)];
    }

    bool requires_grad() const { return n_->requires_grad; }
    TensorT& set_requires_grad(bool on) {
        n_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return !n_->grad.empty(); }
    const std::vector<T>& grad() const { return n_->grad; }
    std::vector<T>& grad() { return n_->grad; }
    void ensure_grad() { n_->ensure_grad(); }
    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }

    // Deep copy without graph history.
    TensorT clone() const {
        auto out = from_data(n_->shape, n_->value);
        return out;
    }

    // Shares nothing with the graph: same values, no parents, no grad flow.
    TensorT detach() const { return clone(); }

    void assert_finite(const std::string& what) const {
        for (T v : n_->value)
            if (!std::isfinite(static_cast<double>(v)))
                throw NumericError("non-finite value in " + what);
    }

    // Reverse topological traversal from a scalar; accumulates gradients into
    // every reachable node that requires them.
    void backward() {
        if (numel() != 1) throw ContractError("backward() requires a scalar loss, got " + shape_str(shape()));
        if (!n_->requires_grad) return;
        std::vector<Node<T>*> order;
        std::unordered_set<Node<T>*> seen;
        std::vector<std::pair<Node<T>*, size_t>> stack;
        stack.emplace_back(n_.get(), 0);
        seen.insert(n_.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Node<T>* p = node->parents[next++].get();
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        n_->ensure_grad();
        n_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it)
            if ((*it)->backward_fn) (*it)->backward_fn();
    }

    std::shared_ptr<Node<T>>& node() { return n_; }
    const std::shared_ptr<Node<T>>& node() const { return n_; }

    explicit TensorT(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  private:
    std::shared_ptr<Node<T>> n_;
};

namespace detail {

template <typename T>
TensorT<T> make_op_result(Shape shape, std::vector<T> value, bool rec,
                          std::vector<std::shared_ptr<Node<T>>> parents) {
    auto node = std::make_shared<Node<T>>(Node<T>{std::move(shape), std::move(value)});
    if (rec) {
        node->requires_grad = true;
        node->parents = std::move(parents);
    }
    return TensorT<T>(node);
}

template <typename T>
bool should_record(std::initializer_list<const TensorT<T>*> inputs) {
    if (!autograd::grad_mode()) return false;
    for (const auto* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        const int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
        const int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
        if (da != db && da != 1 && db != 1)
            throw ShapeError("shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Row-major strides of `in` aligned to an output of shape `out`, with zero
// stride on broadcast dimensions.
inline std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<int64_t> strides(out.size(), 0);
    int64_t s = 1;
    const size_t off = out.size() - in.size();
    for (size_t i = in.size(); i-- > 0;) {
        strides[i + off] = (in[i] == 1 && out[i + off] != 1) ? 0 : s;
        s *= in[i];
    }
    return strides;
}

// Applies f(a_elem, b_elem) over the broadcast of two shapes.
template <typename T, typename F>
void bcast_binary(const Shape& os, const Shape& as, const Shape& bs,
                  const T* a, const T* b, T* o, F f) {
    const int64_t n = shape_numel(os);
    if (as == bs) {
        for (int64_t i = 0; i < n; ++i) o[i] = f(a[i], b[i]);
        return;
    }
    const auto sa = broadcast_strides(as, os);
    const auto sb = broadcast_strides(bs, os);
    const size_t r = os.size();
    std::vector<int64_t> idx(r, 0);
    int64_t ia = 0, ib = 0;
    for (int64_t i = 0; i < n; ++i) {
        o[i] = f(a[ia], b[ib]);
        for (size_t d = r; d-- > 0;) {
            if (++idx[d] < os[d]) {
                ia += sa[d];
                ib += sb[d];
                break;
            }
            idx[d] = 0;
            ia -= sa[d] * (os[d] - 1);
            ib -= sb[d] * (os[d] - 1);
        }
    }
}

// Sums `g` (shaped `from`) into `acc` (shaped `to`), where `to` broadcasts
// to `from`.
template <typename T>
void reduce_into(const std::vector<T>& g, const Shape& from, const Shape& to, std::vector<T>& acc) {
    if (from == to) {
        for (size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
        return;
    }
    const auto st = broadcast_strides(to, from);
    const size_t r = from.size();
    std::vector<int64_t> idx(r, 0);
    int64_t it = 0;
    const int64_t n = shape_numel(from);
    for (int64_t i = 0; i < n; ++i) {
        acc[static_cast<size_t>(it)] += g[static_cast<size_t>(i)];
        for (size_t d = r; d-- > 0;) {
            if (++idx[d] < from[d]) {
                it += st[d];
                break;
            }
            idx[d] = 0;
            it -= st[d] * (from[d] - 1);
        }
    }
}

}  // namespace detail

// ---- elementwise ----------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    const Shape os = detail::broadcast_shape(a.shape(), b.shape());
    std::vector<T> out(shape_numel(os));
    detail::bcast_binary(os, a.shape(), b.shape(), a.data(), b.data(), out.data(),
                         [](T x, T y) { return x + y; });
    const bool rec = detail::should_record<T>({&a, &b});
    auto result = detail::make_op_result<T>(os, std::move(out), rec, {a.node(), b.node()});
    if (rec) {
        auto an = a.node(), bn = b.node();
        auto rn = result.node().get();
        result.node()->backward_fn = [an, bn, rn]() {
            if (an->requires_grad) {
                an->ensure_grad();
                detail::reduce_into(rn->grad, rn->shape, an->shape, an->grad);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                detail::reduce_into(rn->grad, rn->shape, bn->shape, bn->grad);
            }
        };
    }
    return result;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    const Shape os = detail::broadcast_shape(a.shape(), b.shape());
    std::vector<T> out(shape_numel(os));
    detail::bcast_binary(os, a.shape(), b.shape(), a.data(), b.data(), out.data(),
                         [](T x, T y) { return x * y; });
    const bool rec = detail::should_record<T>({&a, &b});
    auto result = detail::make_op_result<T>(os, std::move(out), rec, {a.node(), b.node()});
    if (rec) {
        auto an = a.node(), bn = b.node();
        auto rn = result.node().get();
        result.node()->backward_fn = [an, bn, rn]() {
            std::vector<T> tmp(rn->value.size());
            if (an->requires_grad) {
                detail::bcast_binary(rn->shape, rn->shape, bn->shape, rn->grad.data(),
                                     bn->value.data(), tmp.data(), [](T g, T y) { return g * y; });
                an->ensure_grad();
                detail::reduce_into(tmp, rn->shape, an->shape, an->grad);
            }
            if (bn->requires_grad) {
                detail::bcast_binary(rn->shape, rn->shape, an->shape, rn->grad.data(),
                                     an->value.data(), tmp.data(), [](T g, T x) { return g * x; });
                bn->ensure_grad();
                detail::reduce_into(tmp, rn->shape, bn->shape, bn->grad);
            }
        };
    }
    return result;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T c) {
    std::vector<T> out(a.value());
    for (auto& v : out) v *= c;
    const bool rec = detail::should_record<T>({&a});
    auto result = detail::make_op_result<T>(a.shape(), std::move(out), rec, {a.node()});
    if (rec) {
        auto an = a.node();
        auto rn = result.node().get();
        result.node()->backward_fn = [an, rn, c]() {
            an->ensure_grad();
            for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += c * rn->grad[i];
        };
    }
    return result;
}

template <typename T>
TensorT<T> neg(const TensorT<T>& a) {
    return scale(a, T(-1));
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return add(a, neg(b));
}

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
    std::vector<T> out(a.value());
    for (auto& v : out) v = v > T(0) ? v : T(0);
    const bool rec = detail::should_record<T>({&a});
    auto result = detail::make_op_result<T>(a.shape(), std::move(out), rec, {a.node()});
    if (rec) {
        auto an = a.node();
        auto rn = result.node().get();
        result.node()->backward_fn = [an, rn]() {
            an->ensure_grad();
            for (size_t i = 0; i < an->grad.size(); ++i)
                if (an->value[i] > T(0)) an->grad[i] += rn->grad[i];
        };
    }
    return result;
}

// ---- matrix product --------------------------------------------------------

namespace detail {

// Resolves the (batch, m, n, k) geometry for matmul-like ops. Operands may be
// rank 2, or rank 3 with equal leading batch; a rank-2 right operand is shared
// across the batch.
template <typename T>
struct MatmulDims {
    int64_t batch, m, n, k;
    bool a_batched, b_batched;
};

template <typename T>
MatmulDims<T> matmul_dims(const TensorT<T>& a, const TensorT<T>& b, bool nt) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (a.rank() < 2 || a.rank() > 3 || b.rank() < 2 || b.rank() > 3)
        throw ShapeError("matmul expects rank-2 or rank-3 operands, got " + shape_str(as) +
                         " and " + shape_str(bs));
    MatmulDims<T> d{};
    d.a_batched = a.rank() == 3;
    d.b_batched = b.rank() == 3;
    if (d.b_batched && !d.a_batched)
        throw ShapeError("matmul with batched right operand requires batched left operand");
    if (d.a_batched && d.b_batched && as[0] != bs[0])
        throw ShapeError("matmul batch dimensions disagree: " + shape_str(as) + " vs " + shape_str(bs));
    d.batch = d.a_batched ? as[0] : 1;
    d.m = as[as.size() - 2];
    d.k = as[as.size() - 1];
    const int64_t bk = nt ? bs[bs.size() - 1] : bs[bs.size() - 2];
    d.n = nt ? bs[bs.size() - 2] : bs[bs.size() - 1];
    if (d.k != bk)
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(as) + " vs " +
                         shape_str(bs) + (nt ? " (right transposed)" : ""));
    return d;
}

}  // namespace detail

// a * b, with the gradient rules dA = dC*B^T and dB = A^T*dC.
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    const auto d = detail::matmul_dims(a, b, false);
    Shape os = d.a_batched ? Shape{d.batch, d.m, d.n} : Shape{d.m, d.n};
    std::vector<T> out(shape_numel(os), T(0));
    for (int64_t i = 0; i < d.batch; ++i)
        kernels::gemm(false, false, d.m, d.n, d.k, a.data() + i * d.m * d.k,
                      b.data() + (d.b_batched ? i * d.k * d.n : 0), out.data() + i * d.m * d.n);
    const bool rec = detail::should_record<T>({&a, &b});
    auto result = detail::make_op_result<T>(std::move(os), std::move(out), rec, {a.node(), b.node()});
    if (rec) {
        auto an = a.node(), bn = b.node();
        auto rn = result.node().get();
        result.node()->backward_fn = [an, bn, rn, d]() {
            for (int64_t i = 0; i < d.batch; ++i) {
                const T* g = rn->grad.data() + i * d.m * d.n;
                const T* av = an->value.data() + i * d.m * d.k;
                const T* bv = bn->value.data() + (d.b_batched ? i * d.k * d.n : 0);
                if (an->requires_grad) {
                    an->ensure_grad();
                    kernels::gemm(false, true, d.m, d.k, d.n, g, bv,
                                  an->grad.data() + i * d.m * d.k);
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    kernels::gemm(true, false, d.k, d.n, d.m, av, g,
                                  bn->grad.data() + (d.b_batched ? i * d.k * d.n : 0));
                }
            }
        };
    }
    return result;
}

// a * b^T (the right operand is stored row-major and read transposed).
template <typename T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
    const auto d = detail::matmul_dims(a, b, true);
    Shape os = d.a_batched ? Shape{d.batch, d.m, d.n} : Shape{d.m, d.n};
    std::vector<T> out(shape_numel(os), T(0));
    for (int64_t i = 0; i < d.batch; ++i)
        kernels::gemm(false, true, d.m, d.n, d.k, a.data() + i * d.m * d.k,
                      b.data() + (d.b_batched ? i * d.n * d.k : 0), out.data() + i * d.m * d.n);
    const bool rec = detail::should_record<T>({&a, &b});
    auto result = detail::make_op_result<T>(std::move(os), std::move(out), rec, {a.node(), b.node()});
    if (rec) {
        auto an = a.node(), bn = b.node();
        auto rn = result.node().get();
        result.node()->backward_fn = [an, bn, rn, d]() {
            for (int64_t i = 0; i < d.batch; ++i) {
                const T* g = rn->grad.data() + i * d.m * d.n;
                const T* av = an->value.data() + i * d.m * d.k;
                const T* bv = bn->value.data() + (d.b_batched ? i * d.n * d.k : 0);
                if (an->requires_grad) {
                    an->ensure_grad();
                    kernels::gemm(false, false, d.m, d.k, d.n, g, bv,
                                  an->grad.data() + i * d.m * d.k);
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    kernels::gemm(true, false, d.n, d.k, d.m, g, av,
                                  bn->grad.data() + (d.b_batched ? i * d.n * d.k : 0));
                }
            }
        };
    }
    return result;
}

// ---- softmax ----------------------------------------------------------------

// Softmax along `axis`, computed with max subtraction.
template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int64_t axis) {
    const auto& s = x.shape();
    if (axis < 0) axis += x.rank();
    if (axis < 0 || axis >= x.rank())
        throw ShapeError("softmax axis out of range for shape " + shape_str(s));
    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (int64_t i = axis + 1; i < x.rank(); ++i) inner *= s[static_cast<size_t>(i)];
    const int64_t width = s[static_cast<size_t>(axis)];

    std::vector<T> out(x.numel());
    if (inner == 1) {
        kernels::softmax_rows(outer, width, x.data(), out.data());
    } else {
        const T* xv = x.data();
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t in = 0; in < inner; ++in) {
                const int64_t base = o * width * inner + in;
                T mx = xv[base];
                for (int64_t l = 1; l < width; ++l) mx = std::max(mx, xv[base + l * inner]);
                T sum = 0;
                for (int64_t l = 0; l < width; ++l) {
                    const T e = std::exp(xv[base + l * inner] - mx);
                    out[base + l * inner] = e;
                    sum += e;
                }
                const T inv = T(1) / sum;
                for (int64_t l = 0; l < width; ++l) out[base + l * inner] *= inv;
            }
    }
    const bool rec = detail::should_record<T>({&x});
    auto result = detail::make_op_result<T>(s, std::move(out), rec, {x.node()});
    if (rec) {
        auto xn = x.node();
        auto rn = result.node().get();
        result.node()->backward_fn = [xn, rn, outer, inner, width]() {
            xn->ensure_grad();
            const T* y = rn->value.data();
            const T* g = rn->grad.data();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t in = 0; in < inner; ++in) {
                    const int64_t base = o * width * inner + in;
                    T dot = 0;
                    for (int64_t l = 0; l < width; ++l) dot += g[base + l * inner] * y[base + l * inner];
                    for (int64_t l = 0; l < width; ++l) {
                        const int64_t idx = base + l * inner;
                        xn->grad[idx] += (g[idx] - dot) * y[idx];
                    }
                }
        };
    }
    return result;
}

// ---- layer normalization ------------------------------------------------------

// Zero-mean unit-variance normalization over the last axis, then an affine
// transform by gain and bias (both of last-axis width).
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& bias,
                      T eps = T(1e-6)) {
    const int64_t width = x.shape().back();
    const int64_t rows = x.numel() / width;
    if (gain.numel() != width || bias.numel() != width)
        throw ShapeError("layer_norm gain/bias width " + std::to_string(gain.numel()) + "/" +
                         std::to_string(bias.numel()) + " does not match last axis " +
                         std::to_string(width));
    std::vector<T> out(x.numel());
    auto mean = std::make_shared<std::vector<T>>(rows);
    auto rstd = std::make_shared<std::vector<T>>(rows);
    kernels::layer_norm_rows(rows, width, x.data(), gain.data(), bias.data(), eps, out.data(),
                             mean->data(), rstd->data());
    const bool rec = detail::should_record<T>({&x, &gain, &bias});
    auto result = detail::make_op_result<T>(x.shape(), std::move(out), rec,
                                            {x.node(), gain.node(), bias.node()});
    if (rec) {
        auto xn = x.node(), gn = gain.node(), bn = bias.node();
        auto rn = result.node().get();
        result.node()->backward_fn = [xn, gn, bn, rn, mean, rstd, rows, width]() {
            const T* g = rn->grad.data();
            const T* xv = xn->value.data();
            const T* gv = gn->value.data();
            const bool dx = xn->requires_grad;
            if (dx) xn->ensure_grad();
            if (gn->requires_grad) gn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const T mu = (*mean)[r], rs = (*rstd)[r];
                const T* gr = g + r * width;
                const T* xr = xv + r * width;
                T sum_dyh = 0, sum_dyh_xhat = 0;
                for (int64_t j = 0; j < width; ++j) {
                    const T xhat = (xr[j] - mu) * rs;
                    const T dyh = gr[j] * gv[j];
                    sum_dyh += dyh;
                    sum_dyh_xhat += dyh * xhat;
                    if (gn->requires_grad) gn->grad[j] += gr[j] * xhat;
                    if (bn->requires_grad) bn->grad[j] += gr[j];
                }
                if (dx) {
                    const T inv_w = T(1) / T(width);
                    for (int64_t j = 0; j < width; ++j) {
                        const T xhat = (xr[j] - mu) * rs;
                        const T dyh = gr[j] * gv[j];
                        xn->grad[r * width + j] +=
                            rs * (dyh - inv_w * sum_dyh - xhat * inv_w * sum_dyh_xhat);
                    }
                }
            }
        };
    }
    return result;
}

// ---- embedding ---------------------------------------------------------------

// Gathers rows of `weight` (V x d) by id; the gradient scatter-adds row-wise.
template <typename T>
TensorT<T> embedding(const TensorT<T>& weight, const std::vector<int32_t>& ids) {
    if (weight.rank() != 2) throw ShapeError("embedding weight must be rank 2");
    const int64_t v = weight.dim(0), d = weight.dim(1);
    if (ids.empty()) throw ContractError("embedding lookup on empty id sequence");
    std::vector<T> out(static_cast<size_t>(ids.size()) * d);
    for (size_t i = 0; i < ids.size(); ++i) {
        const int32_t id = ids[i];
        if (id < 0 || id >= v)
            throw ContractError("token id " + std::to_string(id) + " out of range [0," +
                                std::to_string(v) + ")");
        std::copy_n(weight.data() + static_cast<int64_t>(id) * d, d, out.data() + i * d);
    }
    const bool rec = detail::should_record<T>({&weight});
    auto result = detail::make_op_result<T>({static_cast<int64_t>(ids.size()), d}, std::move(out),
                                            rec, {weight.node()});
    if (rec) {
        auto wn = weight.node();
        auto rn = result.node().get();
        auto ids_copy = ids;
        result.node()->backward_fn = [wn, rn, ids_copy, d]() {
            wn->ensure_grad();
            for (size_t i = 0; i < ids_copy.size(); ++i) {
                T* dst = wn->grad.data() + static_cast<int64_t>(ids_copy[i]) * d;
                const T* src = rn->grad.data() + i * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        };
    }
    return result;
}

// ---- dropout -----------------------------------------------------------------

// Inverted dropout: keeps with probability 1-p and scales by 1/(1-p) while
// training; identity in eval mode.
template <typename T>
TensorT<T> dropout(const TensorT<T>& x, T p, bool training, std::mt19937& rng) {
    if (p < T(0) || p >= T(1)) throw ContractError("dropout probability must be in [0,1)");
    if (!training || p == T(0)) return x;
    std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
    const T inv = T(1) / (T(1) - p);
    auto mask = std::make_shared<std::vector<T>>(x.numel());
    std::vector<T> out(x.numel());
    for (int64_t i = 0; i < x.numel(); ++i) {
        (*mask)[i] = keep(rng) ? inv : T(0);
        out[i] = x.data()[i] * (*mask)[i];
    }
    const bool rec = detail::should_record<T>({&x});
    auto result = detail::make_op_result<T>(x.shape(), std::move(out), rec, {x.node()});
    if (rec) {
        auto xn = x.node();
        auto rn = result.node().get();
        result.node()->backward_fn = [xn, rn, mask]() {
            xn->ensure_grad();
            for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += rn->grad[i] * (*mask)[i];
        };
    }
    return result;
}

// ---- shape manipulation --------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape) {
    validate_shape(shape);
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape from " + shape_str(x.shape()) + " to " + shape_str(shape) +
                         " changes element count");
    std::vector<T> out(x.value());
    const bool rec = detail::should_record<T>({&x});
    auto result = detail::make_op_result<T>(std::move(shape), std::move(out), rec, {x.node()});
    if (rec) {
        auto xn = x.node();
        auto rn = result.node().get();
        result.node()->backward_fn = [xn, rn]() {
            xn->ensure_grad();
            for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += rn->grad[i];
        };
    }
    return result;
}

// Slice [lo, hi) of the last axis.
template <typename T>
TensorT<T> slice_lastdim(const TensorT<T>& x, int64_t lo, int64_t hi) {
    const int64_t width = x.shape().back();
    if (lo < 0 || hi > width || lo >= hi)
        throw ShapeError("slice [" + std::to_string(lo) + "," + std::to_string(hi) +
                         ") invalid for last axis of width " + std::to_string(width));
    const int64_t rows = x.numel() / width;
    const int64_t w = hi - lo;
    Shape os = x.shape();
    os.back() = w;
    std::vector<T> out(rows * w);
    for (int64_t r = 0; r < rows; ++r)
        std::copy_n(x.data() + r * width + lo, w, out.data() + r * w);
    const bool rec = detail::should_record<T>({&x});
    auto result = detail::make_op_result<T>(std::move(os), std::move(out), rec, {x.node()});
    if (rec) {
        auto xn = x.node();
        auto rn = result.node().get();
        result.node()->backward_fn = [xn, rn, rows, width, w, lo]() {
            xn->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const T* src = rn->grad.data() + r * w;
                T* dst = xn->grad.data() + r * width + lo;
                for (int64_t j = 0; j < w; ++j) dst[j] += src[j];
            }
        };
    }
    return result;
}

template <typename T>
TensorT<T> concat_lastdim(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    Shape lead = parts[0].shape();
    lead.pop_back();
    int64_t width = 0;
    for (const auto& p : parts) {
        Shape pl = p.shape();
        const int64_t w = pl.back();
        pl.pop_back();
        if (pl != lead) throw ShapeError("concat leading dimensions disagree");
        width += w;
    }
    const int64_t rows = shape_numel(lead);
    Shape os = lead;
    os.push_back(width);
    std::vector<T> out(rows * width);
    int64_t off = 0;
    for (const auto& p : parts) {
        const int64_t w = p.shape().back();
        for (int64_t r = 0; r < rows; ++r)
            std::copy_n(p.data() + r * w, w, out.data() + r * width + off);
        off += w;
    }
    bool rec = autograd::grad_mode();
    if (rec) {
        rec = false;
        for (const auto& p : parts) rec = rec || p.requires_grad();
    }
    std::vector<std::shared_ptr<Node<T>>> parents;
    for (const auto& p : parts) parents.push_back(p.node());
    auto result = detail::make_op_result<T>(std::move(os), std::move(out), rec, std::move(parents));
    if (rec) {
        auto rn = result.node().get();
        result.node()->backward_fn = [rn, rows, width]() {
            int64_t off2 = 0;
            for (auto& pn : rn->parents) {
                const int64_t w = pn->shape.back();
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    for (int64_t r = 0; r < rows; ++r) {
                        const T* src = rn->grad.data() + r * width + off2;
                        T* dst = pn->grad.data() + r * w;
                        for (int64_t j = 0; j < w; ++j) dst[j] += src[j];
                    }
                }
                off2 += w;
            }
        };
    }
    return result;
}

// Concatenate rank-2 tensors along the row axis.
template <typename T>
TensorT<T> concat_rows(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    const int64_t width = parts[0].shape().back();
    int64_t rows = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.shape().back() != width)
            throw ShapeError("concat_rows requires rank-2 parts of equal width");
        rows += p.dim(0);
    }
    std::vector<T> out;
    out.reserve(rows * width);
    for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
    bool rec = autograd::grad_mode();
    if (rec) {
        rec = false;
        for (const auto& p : parts) rec = rec || p.requires_grad();
    }
    std::vector<std::shared_ptr<Node<T>>> parents;
    for (const auto& p : parts) parents.push_back(p.node());
    auto result = detail::make_op_result<T>({rows, width}, std::move(out), rec, std::move(parents));
    if (rec) {
        auto rn = result.node().get();
        result.node()->backward_fn = [rn]() {
            int64_t off = 0;
            for (auto& pn : rn->parents) {
                const int64_t n = static_cast<int64_t>(pn->value.size());
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    for (int64_t i = 0; i < n; ++i) pn->grad[i] += rn->grad[off + i];
                }
                off += n;
            }
        };
    }
    return result;
}

// Stacks rank-2 tensors [L_i x W] into [B x L_max x W], zero-padding rows.
template <typename T>
TensorT<T> stack_rows_padded(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw ContractError("stack of zero tensors");
    const int64_t width = parts[0].shape().back();
    int64_t lmax = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.shape().back() != width)
            throw ShapeError("stack_rows_padded requires rank-2 parts of equal width");
        lmax = std::max(lmax, p.dim(0));
    }
    const int64_t b = static_cast<int64_t>(parts.size());
    std::vector<T> out(b * lmax * width, T(0));
    for (int64_t i = 0; i < b; ++i)
        std::copy(parts[i].value().begin(), parts[i].value().end(), out.begin() + i * lmax * width);
    bool rec = autograd::grad_mode();
    if (rec) {
        rec = false;
        for (const auto& p : parts) rec = rec || p.requires_grad();
    }
    std::vector<std::shared_ptr<Node<T>>> parents;
    for (const auto& p : parts) parents.push_back(p.node());
    auto result =
        detail::make_op_result<T>({b, lmax, width}, std::move(out), rec, std::move(parents));
    if (rec) {
        auto rn = result.node().get();
        result.node()->backward_fn = [rn, lmax, width]() {
            for (size_t i = 0; i < rn->parents.size(); ++i) {
                auto& pn = rn->parents[i];
                if (!pn->requires_grad) continue;
                pn->ensure_grad();
                const T* src = rn->grad.data() + static_cast<int64_t>(i) * lmax * width;
                for (size_t j = 0; j < pn->grad.size(); ++j) pn->grad[j] += src[j];
            }
        };
    }
    return result;
}

// ---- reductions -----------------------------------------------------------------

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
    T s = 0;
    for (T v : x.value()) s += v;
    const bool rec = detail::should_record<T>({&x});
    auto result = detail::make_op_result<T>({1}, {s}, rec, {x.node()});
    if (rec) {
        auto xn = x.node();
        auto rn = result.node().get();
        result.node()->backward_fn = [xn, rn]() {
            xn->ensure_grad();
            const T g = rn->grad[0];
            for (auto& v : xn->grad) v += g;
        };
    }
    return result;
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& x) {
    return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

}  // namespace mtn
