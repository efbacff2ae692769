#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "phishlab/phishlab.hpp"

namespace phishlab::testing {

using DTensor = nn::Tensor<double>;

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("phishlab-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::string operator/(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline DTensor random_tensor(nn::Shape shape, SplitMix64& rng, double std = 1.0, double mean = 0.0) {
    DTensor t(std::move(shape));
    for (auto& x : t.values()) {
        x = mean + std * rng.normal();
    }
    return t;
}

inline double weighted_sum(const DTensor& y, const DTensor& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        s += y[i] * r[i];
    }
    return s;
}

/// Checks d loss / d params: `loss` reads the current parameter values,
/// `analytic` returns gradients aligned with params.
inline double check_params(const std::vector<DTensor*>& params, const std::function<double()>& loss,
                           const std::function<std::vector<DTensor>()>& analytic) {
    const auto grads = analytic();
    std::vector<double> point, grad;
    for (std::size_t i = 0; i < params.size(); ++i) {
        point.insert(point.end(), params[i]->values().begin(), params[i]->values().end());
        grad.insert(grad.end(), grads.at(i).values().begin(), grads.at(i).values().end());
    }
    auto assign = [&](std::span<const double> x) {
        std::size_t k = 0;
        for (auto* p : params) {
            for (auto& v : p->values()) {
                v = x[k++];
            }
        }
    };
    const auto res = nn::grad_check(
        [&](std::span<const double> x) {
            assign(x);
            return loss();
        },
        point, grad);
    assign(point);
    return res.max_rel_error;
}

// ---------------------------------------------------------------------------
// Gradient-check cases. Each returns the max relative error for one seed.

inline double grad_error_matmul(std::uint64_t seed) {
    SplitMix64 rng(seed);
    auto x = random_tensor({3, 5}, rng);
    auto w = random_tensor({4, 5}, rng);
    const auto r = random_tensor({3, 4}, rng);
    return check_params(
        {&x, &w}, [&] { return weighted_sum(nn::matmul_nt(x, w), r); },
        [&] {
            DTensor dx(x.shape()), dw(w.shape());
            nn::matmul_nt_backward(r, x, w, &dx, &dw);
            return std::vector<DTensor>{dx, dw};
        });
}

inline double grad_error_rmsnorm(std::uint64_t seed) {
    SplitMix64 rng(seed);
    auto x = random_tensor({3, 6}, rng);
    auto scale = random_tensor({6}, rng, 0.3, 1.0);
    const auto r = random_tensor({3, 6}, rng);
    return check_params(
        {&x, &scale}, [&] { return weighted_sum(nn::rmsnorm(x, scale).y, r); },
        [&] {
            const auto fwd = nn::rmsnorm(x, scale);
            DTensor dx(x.shape()), ds(scale.shape());
            nn::rmsnorm_backward(r, x, scale, std::span<const double>(fwd.inv_rms), dx, &ds);
            return std::vector<DTensor>{dx, ds};
        });
}

inline double grad_error_silu(std::uint64_t seed) {
    SplitMix64 rng(seed);
    auto x = random_tensor({4, 5}, rng, 2.0);
    const auto r = random_tensor({4, 5}, rng);
    return check_params(
        {&x}, [&] { return weighted_sum(nn::silu(x), r); },
        [&] {
            DTensor dx(x.shape());
            nn::silu_backward(r, x, dx);
            return std::vector<DTensor>{dx};
        });
}

inline double grad_error_embedding(std::uint64_t seed) {
    SplitMix64 rng(seed);
    auto tok = random_tensor({7, 4}, rng);
    auto pos = random_tensor({5, 4}, rng);
    const std::vector<std::uint32_t> ids = {3, 0, 3, 6};
    const auto r = random_tensor({ids.size(), 4}, rng);
    return check_params(
        {&tok, &pos}, [&] { return weighted_sum(nn::embed(tok, pos, std::span<const std::uint32_t>(ids)), r); },
        [&] {
            DTensor dt(tok.shape()), dp(pos.shape());
            nn::embed_backward(r, std::span<const std::uint32_t>(ids), &dt, &dp);
            return std::vector<DTensor>{dt, dp};
        });
}

inline double grad_error_attention(std::uint64_t seed) {
    SplitMix64 rng(seed);
    auto q = random_tensor({5, 8}, rng);
    auto k = random_tensor({5, 8}, rng);
    auto v = random_tensor({5, 8}, rng);
    const auto r = random_tensor({5, 8}, rng);
    return check_params(
        {&q, &k, &v}, [&] { return weighted_sum(nn::causal_attention(q, k, v, 2).out, r); },
        [&] {
            const auto fwd = nn::causal_attention(q, k, v, 2);
            DTensor dq(q.shape()), dk(k.shape()), dv(v.shape());
            nn::causal_attention_backward(r, q, k, v, fwd.probs, 2, dq, dk, dv);
            return std::vector<DTensor>{dq, dk, dv};
        });
}

inline double grad_error_loss(std::uint64_t seed) {
    SplitMix64 rng(seed);
    auto logits = random_tensor({4, 5}, rng, 2.0);
    const std::vector<std::size_t> targets = {0, 4, 2, 2};
    const nn::LossConfig cfg{0.1, 5};
    return check_params(
        {&logits},
        [&] { return nn::cross_entropy_smoothed(logits, std::span<const std::size_t>(targets), cfg).loss; },
        [&] {
            return std::vector<DTensor>{
                nn::cross_entropy_smoothed(logits, std::span<const std::size_t>(targets), cfg).grad};
        });
}

/// Small config for whole-model checks.
inline model::ModelConfig grad_check_config(bool tied) {
    model::ModelConfig c;
    c.vocab_size = 11;
    c.d_model = 8;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_ff = 12;
    c.max_seq_len = 6;
    c.tie_embeddings = tied;
    return c;
}

/// Random double weights with O(1) gradients; norm scales near 1.
inline model::Weights<double> random_weights(const model::ModelConfig& c, SplitMix64& rng) {
    auto w = model::zeros_like<double>(c);
    model::for_each_tensor(w, c, [&](const std::string& name, DTensor& t) {
        const bool norm = name.find("norm") != std::string::npos;
        for (auto& x : t.values()) {
            x = norm ? 1.0 + 0.2 * rng.normal() : 0.4 * rng.normal();
        }
    });
    return w;
}

inline std::vector<DTensor*> weight_list(model::Weights<double>& w, const model::ModelConfig& c) {
    std::vector<DTensor*> out;
    model::for_each_tensor(w, c, [&](const std::string&, DTensor& t) { out.push_back(&t); });
    return out;
}

inline std::vector<DTensor*> adapter_list(model::LoraAdapter<double>& a) {
    std::vector<DTensor*> out;
    a.for_each_tensor([&](const std::string&, DTensor& t) { out.push_back(&t); });
    return out;
}

inline std::vector<DTensor> values_of(const std::vector<DTensor*>& ts) {
    std::vector<DTensor> out;
    for (auto* t : ts) {
        out.push_back(*t);
    }
    return out;
}

/// Whole decoder under the next-token loss: every base tensor.
inline double grad_error_decoder_lm(std::uint64_t seed, bool tied) {
    const auto c = grad_check_config(tied);
    SplitMix64 rng(seed);
    auto w = random_weights(c, rng);
    std::vector<tokenizer::TokenId> seq(c.max_seq_len + 1);
    for (auto& id : seq) {
        id = static_cast<tokenizer::TokenId>(rng.below(c.vocab_size));
    }
    const std::span<const tokenizer::TokenId> input(seq.data(), c.max_seq_len);
    const std::span<const tokenizer::TokenId> target(seq.data() + 1, c.max_seq_len);
    const nn::LossConfig loss_cfg{0.1, c.vocab_size};
    const model::Decoder<double> dec(c, w, nullptr);
    return check_params(
        weight_list(w, c), [&] { return train::lm_loss<double>(dec, input, target, loss_cfg, 1.0, nullptr).loss; },
        [&] {
            auto g = model::zeros_like<double>(c);
            train::lm_loss<double>(dec, input, target, loss_cfg, 1.0, &g);
            return values_of(weight_list(g, c));
        });
}

/// Whole decoder under the verdict loss: every adapter factor, with a
/// non-zero B so both factors carry gradient.
inline double grad_error_decoder_lora(std::uint64_t seed, bool tied) {
    const auto c = grad_check_config(tied);
    SplitMix64 rng(seed);
    const auto w = random_weights(c, rng);
    const model::LoraSpec spec{2, 3.0, std::vector<model::Target>(model::kAllTargets.begin(), model::kAllTargets.end())};
    auto ad = model::init_adapter<double>(c, spec, seed);
    ad.for_each_tensor([&](const std::string&, DTensor& t) {
        for (auto& x : t.values()) {
            x = 0.4 * rng.normal();
        }
    });
    std::vector<tokenizer::TokenId> ids(5);
    for (auto& id : ids) {
        id = static_cast<tokenizer::TokenId>(rng.below(c.vocab_size));
    }
    const int label = static_cast<int>(seed % 2);
    const nn::LossConfig loss_cfg{0.1, 2};
    const model::Decoder<double> dec(c, w, &ad);
    const auto& out_emb = w.output_embedding(c);
    return check_params(
        adapter_list(ad),
        [&] { return train::verdict_loss<double>(dec, out_emb, ids, label, loss_cfg, 1.0, nullptr).loss; },
        [&] {
            auto g = model::zero_adapter<double>(c, spec);
            train::verdict_loss<double>(dec, out_emb, ids, label, loss_cfg, 1.0, &g);
            return values_of(adapter_list(g));
        });
}

struct GradCase {
    const char* name;
    std::function<double(std::uint64_t)> run;
};

inline std::vector<GradCase> grad_cases() {
    return {
        {"matmul", grad_error_matmul},
        {"rmsnorm", grad_error_rmsnorm},
        {"silu", grad_error_silu},
        {"embedding", grad_error_embedding},
        {"causal_attention", grad_error_attention},
        {"smoothed_cross_entropy", grad_error_loss},
        {"decoder_lm_tied", [](std::uint64_t s) { return grad_error_decoder_lm(s, true); }},
        {"decoder_lm_untied", [](std::uint64_t s) { return grad_error_decoder_lm(s, false); }},
        {"decoder_lora_tied", [](std::uint64_t s) { return grad_error_decoder_lora(s, true); }},
        {"decoder_lora_untied", [](std::uint64_t s) { return grad_error_decoder_lora(s, false); }},
    };
}

// ---------------------------------------------------------------------------
// Random strings

/// Random normalized text: lowercase ASCII words, punctuation, digits and a
/// few multi-byte letters, single spaces, no edge whitespace.
inline std::string random_normalized(SplitMix64& rng) {
    static const std::vector<std::string> atoms = {"a", "b", "c", "e", "k", "o", "s", "t", "z", "0", "7",
                                                   ".", "!", "/", ":", "@", "é", "ß", "ж", "中", "🙂", "ü"};
    const std::size_t words = 1 + rng.below(6);
    std::string s;
    for (std::size_t w = 0; w < words; ++w) {
        if (w > 0) {
            s += ' ';
        }
        const std::size_t len = 1 + rng.below(8);
        for (std::size_t i = 0; i < len; ++i) {
            s += atoms[rng.below(atoms.size())];
        }
    }
    return corpus::normalize(s);
}

inline void append_code_point(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

/// Random valid UTF-8 mixing markup, entities, controls, combining marks,
/// case-sensitive letters and exotic whitespace.
inline std::string random_unicode(SplitMix64& rng) {
    static const std::vector<std::string> pieces = {
        "<b>", "</b>", "<a href=\"x\">", "</a>", "<br/>", "<p>", "<!-- c -->", "&amp;", "&nbsp;", "&lt;", "&gt;b&gt;",
        "&#65;", "&#x41;", "&bogus;", "<", ">", "&", "<<b>>", "<<", " ", "\t", "\n", "\r\n", " ", " ",
        "​", "﻿", "́", "̈", "É", "ẞ", "İ", "Σ", "K", "Straße", "ǅ",
        "HELLO", "World", "ﬁ", "\x01", "\x7f"};
    const std::size_t n = rng.below(14);
    std::string s;
    for (std::size_t i = 0; i < n; ++i) {
        switch (rng.below(3)) {
        case 0:
            s += pieces[rng.below(pieces.size())];
            break;
        case 1: {
            char32_t cp = 0;
            do {
                cp = static_cast<char32_t>(rng.below(0x3000));
            } while (cp >= 0xD800 && cp <= 0xDFFF);
            append_code_point(s, cp);
            break;
        }
        default:
            s += static_cast<char>('A' + rng.below(26));
            s += static_cast<char>('a' + rng.below(26));
        }
    }
    return s;
}

} // namespace phishlab::testing
