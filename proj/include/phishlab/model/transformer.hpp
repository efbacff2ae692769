#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "phishlab/model/lora.hpp"
#include "phishlab/model/model.hpp"
#include "phishlab/model/weights.hpp"
#include "phishlab/nn/kernels.hpp"
#include "phishlab/tokenizer.hpp"

namespace phishlab::model {

using tokenizer::TokenId;

/// Activations kept from a forward pass for the backward pass.
template <class T>
struct LayerCache {
    Tensor<T> x_in;
    std::vector<T> inv1;
    Tensor<T> xn1;
    Tensor<T> q, k, v;
    Tensor<T> probs;
    Tensor<T> attn;
    Tensor<T> x_mid;
    std::vector<T> inv2;
    Tensor<T> xn2;
    Tensor<T> up;
    Tensor<T> act;
    std::array<Tensor<T>, 6> xa;  // x A^T per adapted target
};

template <class T>
struct ForwardCache {
    std::vector<TokenId> ids;
    std::vector<LayerCache<T>> layers;
    Tensor<T> x_final;
    std::vector<T> inv_final;
    Tensor<T> hidden;
};

/// Pre-norm decoder: per layer x += Wo attn(RMSNorm(x)), then
/// x += W_down silu(W_up RMSNorm(x)); a final RMSNorm feeds the LM head.
/// With an adapter, each targeted W acts as W + (alpha / r) B A; base tensors
/// are only read.
template <class T>
class Decoder {
public:
    Decoder(const ModelConfig& config, const Weights<T>& weights, const LoraAdapter<T>* adapter)
        : config_(config), w_(weights), adapter_(adapter) {
        config_.validate();
        if (w_.layers.size() != config_.n_layers) {
            throw ValidationError("weights have " + std::to_string(w_.layers.size()) + " layers, config says " +
                                  std::to_string(config_.n_layers));
        }
        if (adapter_ != nullptr) {
            validate_adapter(*adapter_, config_);
            scale_ = static_cast<T>(adapter_->spec.scale());
        }
    }

    const ModelConfig& config() const noexcept { return config_; }

    /// Final-norm hidden states [T x d].
    Tensor<T> hidden(std::span<const TokenId> ids, ForwardCache<T>* cache = nullptr) const {
        if (ids.size() > config_.max_seq_len) {
            throw ValidationError("input of " + std::to_string(ids.size()) + " tokens exceeds max_seq_len " +
                                  std::to_string(config_.max_seq_len));
        }
        if (ids.empty()) {
            throw ValidationError("input sequence is empty");
        }
        Tensor<T> x = nn::embed(w_.token_emb, w_.pos_emb, ids);
        if (cache != nullptr) {
            cache->ids.assign(ids.begin(), ids.end());
            cache->layers.assign(config_.n_layers, LayerCache<T>{});
        }
        for (std::size_t l = 0; l < config_.n_layers; ++l) {
            const auto& lw = w_.layers[l];
            LayerCache<T> scratch;
            LayerCache<T>& c = cache != nullptr ? cache->layers[l] : scratch;
            c.x_in = x;
            auto n1 = nn::rmsnorm(x, lw.attn_norm);
            c.xn1 = std::move(n1.y);
            c.inv1 = std::move(n1.inv_rms);
            c.q = project(c.xn1, l, Target::wq, c);
            c.k = project(c.xn1, l, Target::wk, c);
            c.v = project(c.xn1, l, Target::wv, c);
            auto att = nn::causal_attention(c.q, c.k, c.v, config_.n_heads);
            c.attn = std::move(att.out);
            c.probs = std::move(att.probs);
            nn::add_inplace(x, project(c.attn, l, Target::wo, c));
            c.x_mid = x;
            auto n2 = nn::rmsnorm(x, lw.ffn_norm);
            c.xn2 = std::move(n2.y);
            c.inv2 = std::move(n2.inv_rms);
            c.up = project(c.xn2, l, Target::w_up, c);
            c.act = nn::silu(c.up);
            nn::add_inplace(x, project(c.act, l, Target::w_down, c));
        }
        auto nf = nn::rmsnorm(x, w_.final_norm);
        if (cache != nullptr) {
            cache->x_final = std::move(x);
            cache->inv_final = nf.inv_rms;
            cache->hidden = nf.y;
        }
        return std::move(nf.y);
    }

    /// LM head: logits [rows x V] for the given hidden rows.
    Tensor<T> logits(const Tensor<T>& hidden) const {
        return nn::matmul_nt(hidden, w_.output_embedding(config_));
    }

    /// Logits of selected vocabulary entries only: [rows x ids.size()].
    Tensor<T> logits_for(const Tensor<T>& hidden, std::span<const TokenId> vocab_ids) const {
        const auto& e = w_.output_embedding(config_);
        Tensor<T> out({hidden.rows(), vocab_ids.size()});
        for (std::size_t r = 0; r < hidden.rows(); ++r) {
            const auto h = hidden.row(r);
            for (std::size_t j = 0; j < vocab_ids.size(); ++j) {
                const auto er = e.row(vocab_ids[j]);
                T s = 0;
                for (std::size_t c = 0; c < h.size(); ++c) {
                    s += h[c] * er[c];
                }
                out.at(r, j) = s;
            }
        }
        return out;
    }

    /// Gradient of the head: accumulates d hidden and, when dbase is given,
    /// the output-embedding gradient.
    void logits_backward(const Tensor<T>& hidden, const Tensor<T>& dlogits, Tensor<T>& dhidden,
                         Weights<T>* dbase) const {
        Tensor<T>* de = nullptr;
        if (dbase != nullptr) {
            de = config_.tie_embeddings ? &dbase->token_emb : &dbase->lm_head;
        }
        nn::matmul_nt_backward(dlogits, hidden, w_.output_embedding(config_), &dhidden, de);
    }

    /// Backward through the whole stack from d hidden. Accumulates base
    /// gradients into dbase and adapter gradients into dlora; either may be
    /// null (frozen).
    void backward(const ForwardCache<T>& cache, const Tensor<T>& dhidden, Weights<T>* dbase,
                  LoraAdapter<T>* dlora) const {
        const std::size_t seq = cache.ids.size();
        const std::size_t d = config_.d_model;
        Tensor<T> dx({seq, d});
        nn::rmsnorm_backward(dhidden, cache.x_final, w_.final_norm, std::span<const T>(cache.inv_final), dx,
                             dbase != nullptr ? &dbase->final_norm : nullptr);
        for (std::size_t li = config_.n_layers; li-- > 0;) {
            const auto& lw = w_.layers[li];
            const auto& c = cache.layers[li];
            LayerWeights<T>* gl = dbase != nullptr ? &dbase->layers[li] : nullptr;

            // feed-forward residual branch
            Tensor<T> dact(c.act.shape());
            project_backward(dx, c.act, li, Target::w_down, c, dact, gl, dlora);
            Tensor<T> dup(c.up.shape());
            nn::silu_backward(dact, c.up, dup);
            Tensor<T> dxn2(c.xn2.shape());
            project_backward(dup, c.xn2, li, Target::w_up, c, dxn2, gl, dlora);
            nn::rmsnorm_backward(dxn2, c.x_mid, lw.ffn_norm, std::span<const T>(c.inv2), dx,
                                 gl != nullptr ? &gl->ffn_norm : nullptr);

            // attention residual branch
            Tensor<T> dattn(c.attn.shape());
            project_backward(dx, c.attn, li, Target::wo, c, dattn, gl, dlora);
            Tensor<T> dq(c.q.shape()), dk(c.k.shape()), dv(c.v.shape());
            nn::causal_attention_backward(dattn, c.q, c.k, c.v, c.probs, config_.n_heads, dq, dk, dv);
            Tensor<T> dxn1(c.xn1.shape());
            project_backward(dq, c.xn1, li, Target::wq, c, dxn1, gl, dlora);
            project_backward(dk, c.xn1, li, Target::wk, c, dxn1, gl, dlora);
            project_backward(dv, c.xn1, li, Target::wv, c, dxn1, gl, dlora);
            nn::rmsnorm_backward(dxn1, c.x_in, lw.attn_norm, std::span<const T>(c.inv1), dx,
                                 gl != nullptr ? &gl->attn_norm : nullptr);
        }
        if (dbase != nullptr) {
            nn::embed_backward(dx, std::span<const TokenId>(cache.ids), &dbase->token_emb, &dbase->pos_emb);
        }
    }

private:
    const LoraPair<T>* lora(std::size_t layer, Target t) const {
        return adapter_ != nullptr ? adapter_->find(layer, t) : nullptr;
    }

    Tensor<T> project(const Tensor<T>& x, std::size_t layer, Target t, LayerCache<T>& c) const {
        Tensor<T> y = nn::matmul_nt(x, w_.layers[layer].target(t));
        if (const auto* p = lora(layer, t)) {
            auto& xa = c.xa[static_cast<std::size_t>(t)];
            xa = nn::matmul_nt(x, p->a);
            const Tensor<T> delta = nn::matmul_nt(xa, p->b);
            for (std::size_t i = 0; i < y.size(); ++i) {
                y[i] += scale_ * delta[i];
            }
        }
        return y;
    }

    /// Accumulates dx and, when present, the base and adapter gradients of one
    /// projection y = x W^T + s (x A^T) B^T.
    void project_backward(const Tensor<T>& dy, const Tensor<T>& x, std::size_t layer, Target t,
                          const LayerCache<T>& c, Tensor<T>& dx, LayerWeights<T>* gl, LoraAdapter<T>* dlora) const {
        nn::matmul_nt_backward(dy, x, w_.layers[layer].target(t), &dx, gl != nullptr ? &gl->target(t) : nullptr);
        const auto* p = lora(layer, t);
        if (p == nullptr) {
            return;
        }
        LoraPair<T>* g = dlora != nullptr ? dlora->find(layer, t) : nullptr;
        Tensor<T> dys = dy;
        nn::scale_inplace(dys, scale_);
        Tensor<T> dxa({x.rows(), adapter_->spec.rank});
        nn::matmul_nt_backward(dys, c.xa[static_cast<std::size_t>(t)], p->b, &dxa, g != nullptr ? &g->b : nullptr);
        nn::matmul_nt_backward(dxa, x, p->a, &dx, g != nullptr ? &g->a : nullptr);
    }

    ModelConfig config_;
    const Weights<T>& w_;
    const LoraAdapter<T>* adapter_;
    T scale_ = T(0);
};

/// Logits [T x V] of the base model, optionally with an adapter applied.
/// Stored float32 weights are evaluated in double precision.
inline Tensor<float> forward(const Checkpoint& ckpt, const LoraAdapter<float>* adapter, std::span<const TokenId> ids) {
    const auto weights = cast_weights<double>(ckpt.weights, ckpt.config);
    std::optional<LoraAdapter<double>> wide;
    if (adapter != nullptr) {
        wide = adapter->cast<double>();
    }
    const Decoder<double> dec(ckpt.config, weights, wide ? &*wide : nullptr);
    return dec.logits(dec.hidden(ids)).cast<float>();
}

inline Tensor<float> forward(const Checkpoint& ckpt, const LoraAdapter<float>* adapter,
                             const std::vector<TokenId>& ids) {
    return forward(ckpt, adapter, std::span<const TokenId>(ids));
}

} // namespace phishlab::model
