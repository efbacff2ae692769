#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "phishlab/nn/tensor.hpp"

namespace phishlab::nn {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

template <class T>
struct ParamRef {
    Tensor<T>* value = nullptr;
    const Tensor<T>* grad = nullptr;
    bool trainable = true;
};

/// Moment estimates for one parameter list. Moments are allocated on the
/// first step and must keep their shapes afterwards.
template <class T>
struct AdamWState {
    AdamWConfig config;
    std::uint64_t step = 0;
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
};

/// theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta),
/// with bias-corrected moments. The decay term never enters m or v.
template <class T>
void adamw_step(std::span<const ParamRef<T>> params, AdamWState<T>& state) {
    for (const auto& p : params) {
        if (p.value == nullptr || p.grad == nullptr) {
            throw ValidationError("adamw: null parameter or gradient");
        }
        if (p.value->shape() != p.grad->shape()) {
            throw ValidationError("adamw: gradient shape " + shape_string(p.grad->shape()) +
                                  " does not match parameter " + shape_string(p.value->shape()));
        }
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.value->shape());
            state.v.emplace_back(p.value->shape());
        }
    }
    if (state.m.size() != params.size()) {
        throw ValidationError("adamw: parameter list changed size between steps");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].shape() != params[i].value->shape()) {
            throw ValidationError("adamw: moment shape does not match parameter " + std::to_string(i));
        }
    }
    ++state.step;
    const auto& c = state.config;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    const T b1 = static_cast<T>(c.beta1);
    const T b2 = static_cast<T>(c.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        if (!p.trainable) {
            continue;
        }
        auto& theta = *p.value;
        const auto& g = *p.grad;
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < theta.size(); ++j) {
            m[j] = b1 * m[j] + (T(1) - b1) * g[j];
            v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
            const double m_hat = static_cast<double>(m[j]) / bc1;
            const double v_hat = static_cast<double>(v[j]) / bc2;
            const double update = m_hat / (std::sqrt(v_hat) + c.eps) + c.weight_decay * static_cast<double>(theta[j]);
            theta[j] = static_cast<T>(static_cast<double>(theta[j]) - c.lr * update);
        }
    }
}

template <class T>
void adamw_step(const std::vector<ParamRef<T>>& params, AdamWState<T>& state) {
    adamw_step(std::span<const ParamRef<T>>(params), state);
}

/// Scales gradients in place so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <class T>
double clip_grad_norm(std::span<Tensor<T>* const> grads, double max_norm) {
    double ss = 0.0;
    for (const auto* g : grads) {
        for (T x : g->values()) {
            ss += static_cast<double>(x) * static_cast<double>(x);
        }
    }
    const double norm = std::sqrt(ss);
    if (max_norm > 0.0 && norm > max_norm) {
        const T f = static_cast<T>(max_norm / norm);
        for (auto* g : grads) {
            scale_inplace(*g, f);
        }
    }
    return norm;
}

} // namespace phishlab::nn
