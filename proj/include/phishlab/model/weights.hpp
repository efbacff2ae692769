#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "phishlab/model/config.hpp"
#include "phishlab/nn/tensor.hpp"
#include "phishlab/rng.hpp"

namespace phishlab::model {

using nn::Tensor;

/// Projection matrices that can carry a low-rank adapter.
enum class Target : std::uint8_t { wq, wk, wv, wo, w_up, w_down };

inline constexpr std::array<Target, 6> kAllTargets = {Target::wq, Target::wk, Target::wv,
                                                      Target::wo, Target::w_up, Target::w_down};

inline constexpr std::string_view target_name(Target t) {
    constexpr std::array<std::string_view, 6> names = {"wq", "wk", "wv", "wo", "w_up", "w_down"};
    return names[static_cast<std::size_t>(t)];
}

inline Target target_from_name(std::string_view name) {
    for (auto t : kAllTargets) {
        if (target_name(t) == name) {
            return t;
        }
    }
    throw ValidationError("unknown adapter target '" + std::string(name) + "'");
}

struct TargetDims {
    std::size_t d_in;
    std::size_t d_out;
};

inline TargetDims target_dims(const ModelConfig& c, Target t) {
    switch (t) {
    case Target::w_up: return {c.d_model, c.d_ff};
    case Target::w_down: return {c.d_ff, c.d_model};
    default: return {c.d_model, c.d_model};
    }
}

template <class T>
struct LayerWeights {
    Tensor<T> attn_norm;  // [d]
    Tensor<T> wq, wk, wv, wo;  // [d x d]
    Tensor<T> ffn_norm;   // [d]
    Tensor<T> w_up;       // [d_ff x d]
    Tensor<T> w_down;     // [d x d_ff]

    Tensor<T>& target(Target t) {
        switch (t) {
        case Target::wq: return wq;
        case Target::wk: return wk;
        case Target::wv: return wv;
        case Target::wo: return wo;
        case Target::w_up: return w_up;
        default: return w_down;
        }
    }
    const Tensor<T>& target(Target t) const { return const_cast<LayerWeights*>(this)->target(t); }

    friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

/// All base tensors of the decoder. lm_head is empty when embeddings are tied.
template <class T>
struct Weights {
    Tensor<T> token_emb;  // [V x d]
    Tensor<T> pos_emb;    // [max_seq_len x d]
    std::vector<LayerWeights<T>> layers;
    Tensor<T> final_norm;  // [d]
    Tensor<T> lm_head;     // [V x d] when untied

    /// Output projection used by the LM head.
    const Tensor<T>& output_embedding(const ModelConfig& c) const { return c.tie_embeddings ? token_emb : lm_head; }

    friend bool operator==(const Weights&, const Weights&) = default;
};

/// Shapes in canonical manifest order.
inline std::vector<std::pair<std::string, nn::Shape>> tensor_manifest(const ModelConfig& c) {
    std::vector<std::pair<std::string, nn::Shape>> m;
    const std::size_t d = c.d_model;
    m.push_back({"token_emb", {c.vocab_size, d}});
    m.push_back({"pos_emb", {c.max_seq_len, d}});
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        m.push_back({p + "attn_norm", {d}});
        m.push_back({p + "wq", {d, d}});
        m.push_back({p + "wk", {d, d}});
        m.push_back({p + "wv", {d, d}});
        m.push_back({p + "wo", {d, d}});
        m.push_back({p + "ffn_norm", {d}});
        m.push_back({p + "w_up", {c.d_ff, d}});
        m.push_back({p + "w_down", {d, c.d_ff}});
    }
    m.push_back({"final_norm", {d}});
    if (!c.tie_embeddings) {
        m.push_back({"lm_head", {c.vocab_size, d}});
    }
    return m;
}

/// Visits every tensor in manifest order as fn(name, tensor).
template <class W, class Fn>
void for_each_tensor(W& w, const ModelConfig& c, Fn&& fn) {
    fn(std::string("token_emb"), w.token_emb);
    fn(std::string("pos_emb"), w.pos_emb);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        auto& layer = w.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        fn(p + "attn_norm", layer.attn_norm);
        fn(p + "wq", layer.wq);
        fn(p + "wk", layer.wk);
        fn(p + "wv", layer.wv);
        fn(p + "wo", layer.wo);
        fn(p + "ffn_norm", layer.ffn_norm);
        fn(p + "w_up", layer.w_up);
        fn(p + "w_down", layer.w_down);
    }
    fn(std::string("final_norm"), w.final_norm);
    if (!c.tie_embeddings) {
        fn(std::string("lm_head"), w.lm_head);
    }
}

/// Zero tensors with the shapes the config prescribes (gradient buffers).
template <class T>
Weights<T> zeros_like(const ModelConfig& c) {
    Weights<T> w;
    w.layers.resize(c.n_layers);
    auto manifest = tensor_manifest(c);
    std::size_t i = 0;
    for_each_tensor(w, c, [&](const std::string&, Tensor<T>& t) { t = Tensor<T>(manifest[i++].second); });
    return w;
}

template <class U, class T>
Weights<U> cast_weights(const Weights<T>& w, const ModelConfig& c) {
    Weights<U> out;
    out.layers.resize(w.layers.size());
    std::vector<const Tensor<T>*> src;
    for_each_tensor(w, c, [&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
    std::size_t i = 0;
    for_each_tensor(out, c, [&](const std::string&, Tensor<U>& t) { t = src[i++]->template cast<U>(); });
    return out;
}

/// Little-endian IEEE-754 binary32 bytes of a float sequence.
inline void append_le_floats(std::string& out, std::span<const float> values) {
    const std::size_t start = out.size();
    out.resize(start + values.size() * 4);
    char* dst = out.data() + start;
    for (float f : values) {
        const auto bits = std::bit_cast<std::uint32_t>(f);
        dst[0] = static_cast<char>(bits & 0xFF);
        dst[1] = static_cast<char>((bits >> 8) & 0xFF);
        dst[2] = static_cast<char>((bits >> 16) & 0xFF);
        dst[3] = static_cast<char>((bits >> 24) & 0xFF);
        dst += 4;
    }
}

inline void read_le_floats(std::string_view bytes, std::span<float> out) {
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + 4 * i);
        const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                                   (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
        out[i] = std::bit_cast<float>(bits);
    }
}

} // namespace phishlab::model
