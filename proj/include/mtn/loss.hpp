#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "mtn/error.hpp"
#include "mtn/tensor.hpp"

namespace mtn {

// Cross-entropy against the label-smoothed distribution: (1 - eps) on the
// gold token plus eps spread uniformly over every non-pad vocabulary entry.
// The pad column is excluded from the softmax support, positions whose target
// is pad_id contribute zero, and the result is averaged over non-pad
// positions.
template <typename T>
TensorT<T> label_smoothed_nll(const TensorT<T>& logits, const std::vector<int32_t>& targets,
                              T eps_ls, int32_t pad_id) {
    if (logits.rank() != 2) throw ShapeError("label_smoothed_nll expects positions x vocab logits");
    if (eps_ls < T(0) || eps_ls >= T(1))
        throw ContractError("label smoothing eps must be in [0,1)");
    const int64_t p = logits.dim(0), v = logits.dim(1);
    if (static_cast<int64_t>(targets.size()) != p)
        throw ShapeError("target count " + std::to_string(targets.size()) +
                         " does not match logit rows " + std::to_string(p));
    if (v < 2) throw ContractError("vocabulary must contain at least one non-pad entry");
    for (int32_t t : targets)
        if (t < 0 || t >= v)
            throw ContractError("target id " + std::to_string(t) + " out of range [0," +
                                std::to_string(v) + ")");

    const int64_t support = v - 1;  // pad excluded
    auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(p) * v, T(0));
    int64_t count = 0;
    double total = 0;
    const T* x = logits.data();
    for (int64_t r = 0; r < p; ++r) {
        if (targets[static_cast<size_t>(r)] == pad_id) continue;
        ++count;
        const T* xr = x + r * v;
        T mx = -std::numeric_limits<T>::infinity();
        for (int64_t k = 0; k < v; ++k)
            if (k != pad_id) mx = std::max(mx, xr[k]);
        double sum = 0;
        for (int64_t k = 0; k < v; ++k)
            if (k != pad_id) sum += std::exp(static_cast<double>(xr[k] - mx));
        const double lse = static_cast<double>(mx) + std::log(sum);
        const int32_t gold = targets[static_cast<size_t>(r)];
        double row_loss = 0;
        for (int64_t k = 0; k < v; ++k) {
            if (k == pad_id) continue;
            const double lp = static_cast<double>(xr[k]) - lse;
            (*probs)[static_cast<size_t>(r * v + k)] = static_cast<T>(std::exp(lp));
            double q = static_cast<double>(eps_ls) / static_cast<double>(support);
            if (k == gold) q += 1.0 - static_cast<double>(eps_ls);
            row_loss -= q * lp;
        }
        total += row_loss;
    }
    if (count == 0) throw ContractError("label_smoothed_nll over pad-only positions");
    const T loss = static_cast<T>(total / static_cast<double>(count));

    const bool rec = detail::should_record<T>({&logits});
    auto result = detail::make_op_result<T>({1}, {loss}, rec, {logits.node()});
    if (rec) {
        auto ln = logits.node();
        auto rn = result.node().get();
        auto tgts = targets;
        result.node()->backward_fn = [ln, rn, probs, tgts, p, v, eps_ls, pad_id, count]() {
            ln->ensure_grad();
            const T g = rn->grad[0] / static_cast<T>(count);
            const T uniform = eps_ls / static_cast<T>(v - 1);
            for (int64_t r = 0; r < p; ++r) {
                const int32_t gold = tgts[static_cast<size_t>(r)];
                if (gold == pad_id) continue;
                T* dst = ln->grad.data() + r * v;
                const T* pr = probs->data() + r * v;
                for (int64_t k = 0; k < v; ++k) {
                    if (k == pad_id) continue;
                    T q = uniform;
                    if (k == gold) q += T(1) - eps_ls;
                    dst[k] += g * (pr[k] - q);
                }
            }
        };
    }
    return result;
}

// Unsmoothed per-token negative log-likelihood summed (not averaged) over
// non-pad positions, plus the position count. Used for perplexity and for
// candidate scoring; inference-only, never recorded on the tape.
template <typename T>
std::pair<double, int64_t> token_nll_sum(const TensorT<T>& logits,
                                         const std::vector<int32_t>& targets, int32_t pad_id) {
    autograd::NoGradGuard ng;
    if (logits.rank() != 2) throw ShapeError("token_nll_sum expects positions x vocab logits");
    const int64_t p = logits.dim(0), v = logits.dim(1);
    if (static_cast<int64_t>(targets.size()) != p)
        throw ShapeError("target count does not match logit rows");
    double total = 0;
    int64_t count = 0;
    const T* x = logits.data();
    for (int64_t r = 0; r < p; ++r) {
        const int32_t gold = targets[static_cast<size_t>(r)];
        if (gold == pad_id) continue;
        if (gold < 0 || gold >= v) throw ContractError("target id out of range");
        const T* xr = x + r * v;
        T mx = -std::numeric_limits<T>::infinity();
        for (int64_t k = 0; k < v; ++k)
            if (k != pad_id) mx = std::max(mx, xr[k]);
        double sum = 0;
        for (int64_t k = 0; k < v; ++k)
            if (k != pad_id) sum += std::exp(static_cast<double>(xr[k] - mx));
        total -= static_cast<double>(xr[gold]) - (static_cast<double>(mx) + std::log(sum));
        ++count;
    }
    return {total, count};
}

// Log-probabilities of the next token given one row of logits, with the pad
// entry excluded from the support.
template <typename T>
std::vector<double> log_probs_row(const T* logits, int64_t v, int32_t pad_id) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int64_t k = 0; k < v; ++k)
        if (k != pad_id) mx = std::max(mx, logits[k]);
    double sum = 0;
    for (int64_t k = 0; k < v; ++k)
        if (k != pad_id) sum += std::exp(static_cast<double>(logits[k] - mx));
    const double lse = static_cast<double>(mx) + std::log(sum);
    std::vector<double> out(static_cast<size_t>(v), -1e30);
    for (int64_t k = 0; k < v; ++k)
        if (k != pad_id) out[static_cast<size_t>(k)] = static_cast<double>(logits[k]) - lse;
    return out;
}

}  // namespace mtn
