#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>

#include <Eigen/Core>

#include "phishlab/nn/tensor.hpp"

namespace phishlab::nn {

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
Eigen::Map<RowMatrix<T>> as_matrix(Tensor<T>& t) {
    return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <class T>
Eigen::Map<const RowMatrix<T>> as_matrix(const Tensor<T>& t) {
    return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <class T>
void require_finite(std::span<const T> values, const char* what) {
    for (T v : values) {
        if (std::isnan(v)) {
            throw ValidationError(std::string(what) + ": NaN input");
        }
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Linear map y = x W^T with W stored [out x in].

template <class T>
Tensor<T> matmul_nt(const Tensor<T>& x, const Tensor<T>& w) {
    if (x.cols() != w.cols()) {
        throw ValidationError("matmul: inner dimensions differ (" + shape_string(x.shape()) + " vs " +
                              shape_string(w.shape()) + ")");
    }
    Tensor<T> y({x.rows(), w.rows()});
    detail::as_matrix(y).noalias() = detail::as_matrix(x) * detail::as_matrix(w).transpose();
    return y;
}

/// Accumulates dx += dy W and, when dw is given, dw += dy^T x.
template <class T>
void matmul_nt_backward(const Tensor<T>& dy, const Tensor<T>& x, const Tensor<T>& w, Tensor<T>* dx, Tensor<T>* dw) {
    if (dy.rows() != x.rows() || dy.cols() != w.rows()) {
        throw ValidationError("matmul backward: gradient shape " + shape_string(dy.shape()) + " mismatched");
    }
    if (dx != nullptr) {
        require_shape(*dx, x.shape(), "matmul backward dx");
        detail::as_matrix(*dx).noalias() += detail::as_matrix(dy) * detail::as_matrix(w);
    }
    if (dw != nullptr) {
        require_shape(*dw, w.shape(), "matmul backward dw");
        detail::as_matrix(*dw).noalias() += detail::as_matrix(dy).transpose() * detail::as_matrix(x);
    }
}

// ---------------------------------------------------------------------------
// Softmax

/// Max-subtracted softmax along `axis`. NaN input is rejected.
template <class T>
Tensor<T> softmax(const Tensor<T>& logits, std::size_t axis) {
    if (axis >= logits.rank()) {
        throw ValidationError("softmax: axis out of range");
    }
    detail::require_finite(logits.span(), "softmax");
    std::size_t outer = 1;
    std::size_t inner = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= logits.dim(i);
    }
    for (std::size_t i = axis + 1; i < logits.rank(); ++i) {
        inner *= logits.dim(i);
    }
    const std::size_t n = logits.dim(axis);
    Tensor<T> out(logits.shape());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t k = 0; k < n; ++k) {
                mx = std::max(mx, logits[base + k * inner]);
            }
            T sum = 0;
            for (std::size_t k = 0; k < n; ++k) {
                const T e = std::exp(logits[base + k * inner] - mx);
                out[base + k * inner] = e;
                sum += e;
            }
            for (std::size_t k = 0; k < n; ++k) {
                out[base + k * inner] /= sum;
            }
        }
    }
    return out;
}

/// Softmax over the last axis.
template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
    return softmax(logits, logits.rank() - 1);
}

// ---------------------------------------------------------------------------
// RMSNorm: y = x / sqrt(mean(x^2) + eps) * scale, per row.

inline constexpr double kRmsEps = 1e-5;

template <class T>
struct RmsNormOut {
    Tensor<T> y;
    std::vector<T> inv_rms;
};

template <class T>
RmsNormOut<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& scale) {
    require_shape(scale, {x.cols()}, "rmsnorm scale");
    RmsNormOut<T> out{Tensor<T>(x.shape()), std::vector<T>(x.rows())};
    const std::size_t d = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto xr = x.row(r);
        T ss = 0;
        for (T v : xr) {
            ss += v * v;
        }
        const T inv = T(1) / std::sqrt(ss / static_cast<T>(d) + static_cast<T>(kRmsEps));
        out.inv_rms[r] = inv;
        auto yr = out.y.row(r);
        for (std::size_t c = 0; c < d; ++c) {
            yr[c] = xr[c] * inv * scale[c];
        }
    }
    return out;
}

/// Accumulates into dx and (optionally) dscale.
template <class T>
void rmsnorm_backward(const Tensor<T>& dy, const Tensor<T>& x, const Tensor<T>& scale, std::span<const T> inv_rms,
                      Tensor<T>& dx, Tensor<T>* dscale) {
    require_shape(dy, x.shape(), "rmsnorm backward dy");
    require_shape(dx, x.shape(), "rmsnorm backward dx");
    const std::size_t d = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto xr = x.row(r);
        const auto dyr = dy.row(r);
        const T inv = inv_rms[r];
        T dot = 0;
        for (std::size_t c = 0; c < d; ++c) {
            dot += dyr[c] * scale[c] * xr[c];
        }
        const T k = inv * inv * inv * dot / static_cast<T>(d);
        auto dxr = dx.row(r);
        for (std::size_t c = 0; c < d; ++c) {
            dxr[c] += inv * dyr[c] * scale[c] - k * xr[c];
        }
        if (dscale != nullptr) {
            for (std::size_t c = 0; c < d; ++c) {
                (*dscale)[c] += dyr[c] * xr[c] * inv;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// SiLU

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = x[i] / (T(1) + std::exp(-x[i]));
    }
    return y;
}

template <class T>
void silu_backward(const Tensor<T>& dy, const Tensor<T>& x, Tensor<T>& dx) {
    require_shape(dy, x.shape(), "silu backward");
    require_shape(dx, x.shape(), "silu backward dx");
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-x[i]));
        dx[i] += dy[i] * s * (T(1) + x[i] * (T(1) - s));
    }
}

// ---------------------------------------------------------------------------
// Token embedding lookup plus learned absolute positions.

template <class T, class Id>
Tensor<T> embed(const Tensor<T>& token_emb, const Tensor<T>& pos_emb, std::span<const Id> ids) {
    const std::size_t d = token_emb.cols();
    if (pos_emb.cols() != d) {
        throw ValidationError("embed: token and position tables disagree on width");
    }
    if (ids.empty() || ids.size() > pos_emb.rows()) {
        throw ValidationError("embed: sequence length " + std::to_string(ids.size()) + " outside [1, " +
                              std::to_string(pos_emb.rows()) + "]");
    }
    Tensor<T> x({ids.size(), d});
    for (std::size_t t = 0; t < ids.size(); ++t) {
        const auto id = static_cast<std::size_t>(ids[t]);
        if (id >= token_emb.rows()) {
            throw ValidationError("embed: token id " + std::to_string(id) + " out of range");
        }
        const auto te = token_emb.row(id);
        const auto pe = pos_emb.row(t);
        auto xr = x.row(t);
        for (std::size_t c = 0; c < d; ++c) {
            xr[c] = te[c] + pe[c];
        }
    }
    return x;
}

template <class T, class Id>
void embed_backward(const Tensor<T>& dx, std::span<const Id> ids, Tensor<T>* dtoken, Tensor<T>* dpos) {
    for (std::size_t t = 0; t < ids.size(); ++t) {
        const auto dxr = dx.row(t);
        if (dtoken != nullptr) {
            auto r = dtoken->row(static_cast<std::size_t>(ids[t]));
            for (std::size_t c = 0; c < dxr.size(); ++c) {
                r[c] += dxr[c];
            }
        }
        if (dpos != nullptr) {
            auto r = dpos->row(t);
            for (std::size_t c = 0; c < dxr.size(); ++c) {
                r[c] += dxr[c];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Multi-head causal self-attention over projected q, k, v [T x d].

template <class T>
struct AttentionOut {
    Tensor<T> out;    // [T x d]
    Tensor<T> probs;  // [heads x T x T], zero above the diagonal
};

template <class T>
AttentionOut<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t n_heads) {
    require_shape(k, q.shape(), "attention k");
    require_shape(v, q.shape(), "attention v");
    const std::size_t seq = q.rows();
    const std::size_t d = q.cols();
    if (n_heads == 0 || d % n_heads != 0) {
        throw ValidationError("attention: width not divisible by head count");
    }
    const std::size_t hd = d / n_heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    AttentionOut<T> res{Tensor<T>({seq, d}), Tensor<T>({n_heads, seq, seq})};
    std::vector<T> row(seq);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t off = h * hd;
        for (std::size_t i = 0; i < seq; ++i) {
            const T* qi = q.data() + i * d + off;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j <= i; ++j) {
                const T* kj = k.data() + j * d + off;
                T s = 0;
                for (std::size_t c = 0; c < hd; ++c) {
                    s += qi[c] * kj[c];
                }
                row[j] = s * scale;
                mx = std::max(mx, row[j]);
            }
            T sum = 0;
            for (std::size_t j = 0; j <= i; ++j) {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
            T* p = res.probs.data() + (h * seq + i) * seq;
            T* oi = res.out.data() + i * d + off;
            for (std::size_t j = 0; j <= i; ++j) {
                p[j] = row[j] / sum;
                const T* vj = v.data() + j * d + off;
                for (std::size_t c = 0; c < hd; ++c) {
                    oi[c] += p[j] * vj[c];
                }
            }
        }
    }
    return res;
}

/// Accumulates gradients into dq, dk, dv.
template <class T>
void causal_attention_backward(const Tensor<T>& dout, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const Tensor<T>& probs, std::size_t n_heads, Tensor<T>& dq, Tensor<T>& dk,
                               Tensor<T>& dv) {
    const std::size_t seq = q.rows();
    const std::size_t d = q.cols();
    const std::size_t hd = d / n_heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    require_shape(dout, q.shape(), "attention backward dout");
    std::vector<T> dp(seq);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t off = h * hd;
        for (std::size_t i = 0; i < seq; ++i) {
            const T* p = probs.data() + (h * seq + i) * seq;
            const T* doi = dout.data() + i * d + off;
            T weighted = 0;
            for (std::size_t j = 0; j <= i; ++j) {
                const T* vj = v.data() + j * d + off;
                T* dvj = dv.data() + j * d + off;
                T s = 0;
                for (std::size_t c = 0; c < hd; ++c) {
                    s += doi[c] * vj[c];
                    dvj[c] += p[j] * doi[c];
                }
                dp[j] = s;
                weighted += p[j] * s;
            }
            const T* qi = q.data() + i * d + off;
            T* dqi = dq.data() + i * d + off;
            for (std::size_t j = 0; j <= i; ++j) {
                const T ds = p[j] * (dp[j] - weighted) * scale;
                const T* kj = k.data() + j * d + off;
                T* dkj = dk.data() + j * d + off;
                for (std::size_t c = 0; c < hd; ++c) {
                    dqi[c] += ds * kj[c];
                    dkj[c] += ds * qi[c];
                }
            }
        }
    }
}

} // namespace phishlab::nn
