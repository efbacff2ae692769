#pragma once

#include <cstddef>
#include <string>

#include <nlohmann/json.hpp>

#include "phishlab/error.hpp"

namespace phishlab::model {

struct ModelConfig {
    std::size_t vocab_size = 512;
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t d_ff = 256;
    std::size_t max_seq_len = 128;
    bool tie_embeddings = true;

    std::size_t head_dim() const noexcept { return d_model / n_heads; }

    void validate() const {
        if (vocab_size == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || max_seq_len == 0) {
            throw ValidationError("model config: all sizes must be positive");
        }
        if (d_model % n_heads != 0) {
            throw ValidationError("model config: d_model (" + std::to_string(d_model) +
                                  ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
        }
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},       {"n_layers", c.n_layers},
            {"n_heads", c.n_heads},       {"d_ff", c.d_ff},             {"max_seq_len", c.max_seq_len},
            {"tie_embeddings", c.tie_embeddings}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.d_model = j.at("d_model").get<std::size_t>();
        c.n_layers = j.at("n_layers").get<std::size_t>();
        c.n_heads = j.at("n_heads").get<std::size_t>();
        c.d_ff = j.at("d_ff").get<std::size_t>();
        c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
        c.tie_embeddings = j.value("tie_embeddings", c.tie_embeddings);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

} // namespace phishlab::model
