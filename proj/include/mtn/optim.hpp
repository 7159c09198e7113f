#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mtn/error.hpp"
#include "mtn/nn.hpp"
#include "mtn/tensor.hpp"

namespace mtn {

struct ScheduleConfig {
    int64_t model_dim = 512;
    int64_t warmup_steps = 9660;
};

// d^(-0.5) * min(step^(-0.5), step * warmup^(-1.5)): a linear ramp up to the
// warmup step, then inverse-sqrt decay. Peak value falls exactly at warmup.
inline double noam_lr(int64_t step, const ScheduleConfig& cfg) {
    if (step < 1) throw ContractError("schedule step must be >= 1");
    if (cfg.warmup_steps < 1) throw ContractError("warmup_steps must be >= 1");
    const double d = static_cast<double>(cfg.model_dim);
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(cfg.warmup_steps);
    return std::pow(d, -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

// First/second-moment accumulators aligned with a parameter registry.
template <typename T>
struct AdamStateT {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    int64_t step_count = 0;

    template <typename U>
    void init(const ParamRegistry<U>& params) {
        m.clear();
        v.clear();
        for (const auto& [name, t] : params) {
            m.emplace_back(t->numel(), T(0));
            v.emplace_back(t->numel(), T(0));
        }
        step_count = 0;
    }
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
};

// Bias-corrected Adam update applied in place. Gradients are read from each
// parameter's grad buffer; a NaN gradient aborts the step before any
// parameter is touched.
template <typename T>
void adam_step(ParamRegistry<T>& params, AdamStateT<T>& state, double lr,
               const AdamConfig& cfg = {}) {
    if (lr <= 0) throw ContractError("learning rate must be positive");
    if (state.m.size() != params.size())
        throw ContractError("optimizer state does not match parameter set");
    for (const auto& [name, t] : params) {
        if (!t->has_grad()) continue;
        for (T g : t->grad())
            if (!std::isfinite(static_cast<double>(g)))
                throw NumericError("non-finite gradient in " + name + "; step aborted");
    }
    state.step_count += 1;
    const double t_step = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t_step);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t_step);
    for (size_t i = 0; i < params.size(); ++i) {
        auto* p = params[i].second;
        auto& m = state.m[i];
        auto& v = state.v[i];
        const bool has_grad = p->has_grad();
        const T* g = has_grad ? p->grad().data() : nullptr;
        T* w = p->data();
        for (int64_t j = 0; j < p->numel(); ++j) {
            const double gj = has_grad ? static_cast<double>(g[j]) : 0.0;
            const double mj = cfg.beta1 * static_cast<double>(m[j]) + (1.0 - cfg.beta1) * gj;
            const double vj = cfg.beta2 * static_cast<double>(v[j]) + (1.0 - cfg.beta2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double mhat = mj / bc1;
            const double vhat = vj / bc2;
            w[j] = static_cast<T>(static_cast<double>(w[j]) - lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

// Scales all gradients so the global L2 norm is at most max_norm.
// Returns the pre-clip norm.
template <typename T>
double clip_grad_norm(ParamRegistry<T>& params, double max_norm) {
    double sq = 0;
    for (auto& [name, t] : params)
        if (t->has_grad())
            for (T g : t->grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        const double s = max_norm / norm;
        for (auto& [name, t] : params)
            if (t->has_grad())
                for (T& g : t->grad()) g = static_cast<T>(static_cast<double>(g) * s);
    }
    return norm;
}

template <typename T>
void zero_grads(ParamRegistry<T>& params) {
    for (auto& [name, t] : params) t->zero_grad();
}

}  // namespace mtn
