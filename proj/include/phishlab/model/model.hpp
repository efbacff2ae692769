#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <Eigen/Core>

#include "phishlab/io.hpp"
#include "phishlab/model/config.hpp"
#include "phishlab/model/lora.hpp"
#include "phishlab/model/weights.hpp"
#include "phishlab/rng.hpp"
#include "phishlab/tokenizer.hpp"

namespace phishlab::model {

/// Base model: config plus float32 weights. A tokenizer may travel with the
/// checkpoint so inference needs only one file; it is not part of the
/// payload hash.
struct Checkpoint {
    ModelConfig config;
    Weights<float> weights;
    std::optional<tokenizer::Vocabulary> vocabulary;

    /// Payload bytes: every tensor as little-endian float32 in manifest order.
    std::string payload() const {
        std::string out;
        for_each_tensor(weights, config, [&](const std::string&, const Tensor<float>& t) {
            append_le_floats(out, t.span());
        });
        return out;
    }

    std::string payload_hash() const { return io::sha256_hex(payload()); }
};

/// Weights ~ normal(0, 0.02), norm scales = 1, deterministic in seed.
inline Checkpoint init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Checkpoint ck{config, zeros_like<float>(config), std::nullopt};
    SplitMix64 rng(seed);
    for_each_tensor(ck.weights, config, [&](const std::string& name, Tensor<float>& t) {
        if (name.ends_with("norm")) {
            t.fill(1.0F);
            return;
        }
        for (auto& x : t.values()) {
            x = static_cast<float>(0.02 * rng.normal());
        }
    });
    return ck;
}

struct ParamCount {
    std::uint64_t total = 0;
    std::uint64_t trainable = 0;
    double fraction = 0.0;
};

/// Closed-form parameter accounting.
///
///   total     = V d                   token embedding
///             + S d                   learned positions (S = max_seq_len)
///             + L (4 d^2 + 2 d d_ff + 2 d)   attention, feed-forward, two norms
///             + d                     final norm
///             + V d                   LM head, only when untied
///   trainable = L * sum over targets of r (d_in + d_out)
///
/// Base parameters are frozen during adaptation, so trainable counts adapter
/// factors only and fraction = trainable / total.
inline ParamCount count_params(const ModelConfig& c, const std::optional<LoraSpec>& adapter) {
    const std::uint64_t v = c.vocab_size;
    const std::uint64_t d = c.d_model;
    const std::uint64_t ff = c.d_ff;
    const std::uint64_t layers = c.n_layers;
    ParamCount pc;
    pc.total = v * d + c.max_seq_len * d + layers * (4 * d * d + 2 * d * ff + 2 * d) + d +
               (c.tie_embeddings ? 0 : v * d);
    if (adapter) {
        std::uint64_t per_layer = 0;
        for (auto t : adapter->targets) {
            const auto dims = target_dims(c, t);
            per_layer += adapter->rank * (dims.d_in + dims.d_out);
        }
        pc.trainable = layers * per_layer;
    }
    pc.fraction = static_cast<double>(pc.trainable) / static_cast<double>(pc.total);
    return pc;
}

/// W' = W + (alpha / r) B A for every target, in a new checkpoint. Merging
/// the same adapter twice adds its contribution twice.
inline Checkpoint merge_adapter(const Checkpoint& base, const LoraAdapter<float>& adapter) {
    validate_adapter(adapter, base.config);
    Checkpoint out = base;
    const double s = adapter.spec.scale();
    for (std::size_t l = 0; l < base.config.n_layers; ++l) {
        for (auto t : adapter.spec.targets) {
            const auto* p = adapter.find(l, t);
            auto& w = out.weights.layers[l].target(t);
            using M = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
            Eigen::Map<M> wm(w.data(), static_cast<Eigen::Index>(w.rows()), static_cast<Eigen::Index>(w.cols()));
            Eigen::Map<const M> am(p->a.data(), static_cast<Eigen::Index>(p->a.rows()),
                                   static_cast<Eigen::Index>(p->a.cols()));
            Eigen::Map<const M> bm(p->b.data(), static_cast<Eigen::Index>(p->b.rows()),
                                   static_cast<Eigen::Index>(p->b.cols()));
            const Eigen::MatrixXd delta = bm.cast<double>() * am.cast<double>();
            wm = (wm.cast<double>() + s * delta).cast<float>();
        }
    }
    return out;
}

} // namespace phishlab::model
