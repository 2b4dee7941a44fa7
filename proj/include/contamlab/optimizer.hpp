#pragma once

#include <cmath>
#include <vector>

#include "contamlab/model.hpp"
#include "contamlab/tensor.hpp"

namespace contamlab {

// AdamW constants: beta1 0.9, beta2 0.999, eps 1e-6, bias correction on.
struct AdamConfig {
    double lr = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-6;
    double weight_decay = 0.0;
};

template <class T>
struct OptimizerState {
    std::vector<Tensor<T>> first_moment;
    std::vector<Tensor<T>> second_moment;
    int64_t step = 0;

    static OptimizerState zeros_like(const ModelParams<T>& params) {
        OptimizerState s;
        for (const auto& [name, t] : params.named()) {
            s.first_moment.emplace_back(t.shape(), T(0));
            s.second_moment.emplace_back(t.shape(), T(0));
        }
        return s;
    }
};

// Decoupled-weight-decay Adam update with bias correction. grads are aligned
// with params.named() order.
template <class T>
void adamw_step(ModelParams<T>& params, const std::vector<Tensor<T>>& grads,
                OptimizerState<T>& state, const AdamConfig& cfg) {
    auto& named = params.named();
    if (grads.size() != named.size() || state.first_moment.size() != named.size())
        throw ValidationError("optimizer state/gradient arity mismatch");
    state.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < named.size(); ++i) {
        Tensor<T>& theta = named[i].second;
        const Tensor<T>& g = grads[i];
        if (g.shape() != theta.shape())
            throw ValidationError("gradient shape mismatch for " + named[i].first);
        if (!g.all_finite()) throw NumericError("non-finite gradient for " + named[i].first);
        Tensor<T>& m = state.first_moment[i];
        Tensor<T>& v = state.second_moment[i];
        for (int64_t j = 0; j < theta.numel(); ++j) {
            double gj = g[j];
            double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            double update = (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
            theta[j] = static_cast<T>(theta[j] - cfg.lr * update -
                                      cfg.lr * cfg.weight_decay * theta[j]);
        }
    }
}

// Global-norm gradient clipping; returns the pre-clip norm.
template <class T>
double clip_grad_norm(std::vector<Tensor<T>>& grads, double max_norm) {
    double sq = 0;
    for (const auto& g : grads)
        for (int64_t j = 0; j < g.numel(); ++j) sq += static_cast<double>(g[j]) * g[j];
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        T scale = static_cast<T>(max_norm / norm);
        for (auto& g : grads)
            for (int64_t j = 0; j < g.numel(); ++j) g[j] *= scale;
    }
    return norm;
}

}  // namespace contamlab
