#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "phishlab/model/weights.hpp"

namespace phishlab::model {

/// Rank, scale and placement of a low-rank adapter.
struct LoraSpec {
    std::size_t rank = 8;
    double alpha = 16.0;
    std::vector<Target> targets{kAllTargets.begin(), kAllTargets.end()};

    double scale() const noexcept { return alpha / static_cast<double>(rank); }
    bool has(Target t) const { return std::find(targets.begin(), targets.end(), t) != targets.end(); }

    void validate() const {
        if (rank == 0) {
            throw ValidationError("adapter rank must be positive");
        }
        if (targets.empty()) {
            throw ValidationError("adapter needs at least one target");
        }
        for (std::size_t i = 0; i < targets.size(); ++i) {
            for (std::size_t j = i + 1; j < targets.size(); ++j) {
                if (targets[i] == targets[j]) {
                    throw ValidationError("adapter target '" + std::string(target_name(targets[i])) + "' listed twice");
                }
            }
        }
    }

    friend bool operator==(const LoraSpec&, const LoraSpec&) = default;
};

/// Parses a comma-separated target list such as "wq,wv" or "all".
inline std::vector<Target> parse_targets(std::string_view list) {
    if (list == "all") {
        return {kAllTargets.begin(), kAllTargets.end()};
    }
    std::vector<Target> out;
    std::size_t start = 0;
    while (start <= list.size()) {
        auto end = list.find(',', start);
        if (end == std::string_view::npos) {
            end = list.size();
        }
        auto item = list.substr(start, end - start);
        if (!item.empty()) {
            out.push_back(target_from_name(item));
        }
        start = end + 1;
    }
    return out;
}

/// Factor pair for one target: contribution (alpha / r) * B A.
template <class T>
struct LoraPair {
    Tensor<T> a;  // [r x d_in]
    Tensor<T> b;  // [d_out x r]

    friend bool operator==(const LoraPair&, const LoraPair&) = default;
};

template <class T>
struct LoraAdapter {
    LoraSpec spec;
    std::vector<std::array<std::optional<LoraPair<T>>, 6>> layers;

    const LoraPair<T>* find(std::size_t layer, Target t) const {
        const auto& slot = layers.at(layer)[static_cast<std::size_t>(t)];
        return slot ? &*slot : nullptr;
    }
    LoraPair<T>* find(std::size_t layer, Target t) {
        auto& slot = layers.at(layer)[static_cast<std::size_t>(t)];
        return slot ? &*slot : nullptr;
    }

    /// Visits every factor as fn(name, tensor) in layer, target, (a, b) order.
    template <class Fn>
    void for_each_tensor(Fn&& fn) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            for (auto t : kAllTargets) {
                if (auto* p = find(l, t)) {
                    const std::string base = "layers." + std::to_string(l) + "." + std::string(target_name(t));
                    fn(base + ".lora_a", p->a);
                    fn(base + ".lora_b", p->b);
                }
            }
        }
    }
    template <class Fn>
    void for_each_tensor(Fn&& fn) const {
        const_cast<LoraAdapter*>(this)->for_each_tensor(
            [&](const std::string& name, Tensor<T>& t) { fn(name, static_cast<const Tensor<T>&>(t)); });
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each_tensor([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
        return n;
    }

    template <class U>
    LoraAdapter<U> cast() const {
        LoraAdapter<U> out{spec, {}};
        out.layers.resize(layers.size());
        for (std::size_t l = 0; l < layers.size(); ++l) {
            for (std::size_t t = 0; t < 6; ++t) {
                if (layers[l][t]) {
                    out.layers[l][t] = LoraPair<U>{layers[l][t]->a.template cast<U>(), layers[l][t]->b.template cast<U>()};
                }
            }
        }
        return out;
    }

    friend bool operator==(const LoraAdapter&, const LoraAdapter&) = default;
};

/// Adapter with every factor zero; used for gradient buffers.
template <class T>
LoraAdapter<T> zero_adapter(const ModelConfig& c, const LoraSpec& spec) {
    spec.validate();
    LoraAdapter<T> ad{spec, {}};
    ad.layers.resize(c.n_layers);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        for (auto t : spec.targets) {
            const auto dims = target_dims(c, t);
            ad.layers[l][static_cast<std::size_t>(t)] =
                LoraPair<T>{Tensor<T>({spec.rank, dims.d_in}), Tensor<T>({dims.d_out, spec.rank})};
        }
    }
    return ad;
}

/// Fresh adapter: A ~ normal(0, 1/r) (standard deviation 1/r), B = 0, so the
/// adapter starts as an exact no-op.
template <class T = float>
LoraAdapter<T> init_adapter(const ModelConfig& c, const LoraSpec& spec, std::uint64_t seed) {
    auto ad = zero_adapter<T>(c, spec);
    SplitMix64 rng(seed);
    const double stddev = 1.0 / static_cast<double>(spec.rank);
    ad.for_each_tensor([&](const std::string& name, Tensor<T>& t) {
        if (name.ends_with(".lora_a")) {
            for (auto& x : t.values()) {
                x = static_cast<T>(rng.normal() * stddev);
            }
        }
    });
    return ad;
}

/// Throws unless the adapter has exactly the factors its spec promises for
/// a model with this config.
template <class T>
void validate_adapter(const LoraAdapter<T>& ad, const ModelConfig& c) {
    ad.spec.validate();
    if (ad.layers.size() != c.n_layers) {
        throw ValidationError("adapter has " + std::to_string(ad.layers.size()) + " layers, model has " +
                              std::to_string(c.n_layers));
    }
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        for (auto t : kAllTargets) {
            const auto* p = ad.find(l, t);
            const std::string where = "layer " + std::to_string(l) + " target " + std::string(target_name(t));
            if (!ad.spec.has(t)) {
                if (p != nullptr) {
                    throw ValidationError("adapter carries undeclared factors at " + where);
                }
                continue;
            }
            if (p == nullptr) {
                throw ValidationError("adapter target missing at " + where);
            }
            const auto dims = target_dims(c, t);
            nn::require_shape(p->a, {ad.spec.rank, dims.d_in}, ("adapter A at " + where).c_str());
            nn::require_shape(p->b, {dims.d_out, ad.spec.rank}, ("adapter B at " + where).c_str());
        }
    }
}

} // namespace phishlab::model
