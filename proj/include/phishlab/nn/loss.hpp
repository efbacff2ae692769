#pragma once

#include <cmath>
#include <cstddef>
#include <span>

#include "phishlab/nn/kernels.hpp"
#include "phishlab/nn/tensor.hpp"

namespace phishlab::nn {

/// Label smoothing: target q_k = epsilon / K + (1 - epsilon) [k == y].
struct LossConfig {
    double epsilon = 0.1;
    std::size_t num_classes = 2;

    void validate() const {
        if (!(epsilon >= 0.0 && epsilon < 1.0)) {
            throw ValidationError("label smoothing epsilon must lie in [0, 1)");
        }
        if (num_classes < 1) {
            throw ValidationError("num_classes must be positive");
        }
    }
};

template <class T>
struct LossResult {
    T loss = 0;
    Tensor<T> grad;  // d loss / d logits, [B x K]
};

/// Mean over rows of -sum_k q_k log softmax(logits)_k; gradient (p - q) / B.
template <class T, class Label>
LossResult<T> cross_entropy_smoothed(const Tensor<T>& logits, std::span<const Label> targets, const LossConfig& cfg) {
    cfg.validate();
    const std::size_t batch = logits.rows();
    const std::size_t k = logits.cols();
    if (k != cfg.num_classes) {
        throw ValidationError("cross entropy: logits have " + std::to_string(k) + " classes, config says " +
                              std::to_string(cfg.num_classes));
    }
    if (targets.size() != batch) {
        throw ValidationError("cross entropy: target count does not match batch");
    }
    detail::require_finite(logits.span(), "cross entropy");
    const T off = static_cast<T>(cfg.epsilon / static_cast<double>(k));
    const T on = static_cast<T>(1.0 - cfg.epsilon) + off;
    const T inv_b = T(1) / static_cast<T>(batch);
    LossResult<T> res{T(0), Tensor<T>(logits.shape())};
    for (std::size_t b = 0; b < batch; ++b) {
        const auto y = static_cast<std::size_t>(targets[b]);
        if (y >= k) {
            throw ValidationError("cross entropy: target " + std::to_string(y) + " out of range");
        }
        const auto row = logits.row(b);
        T mx = row[0];
        for (T v : row) {
            mx = std::max(mx, v);
        }
        T sum = 0;
        for (T v : row) {
            sum += std::exp(v - mx);
        }
        const T lse = mx + std::log(sum);
        T loss = 0;
        auto g = res.grad.row(b);
        for (std::size_t c = 0; c < k; ++c) {
            const T q = c == y ? on : off;
            const T logp = row[c] - lse;
            if (q != T(0)) {
                loss -= q * logp;
            }
            g[c] = (std::exp(logp) - q) * inv_b;
        }
        res.loss += loss;
    }
    res.loss *= inv_b;
    return res;
}

} // namespace phishlab::nn
