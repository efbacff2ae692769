#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "phishlab/model/classify.hpp"
#include "phishlab/model/lora.hpp"
#include "phishlab/model/model.hpp"
#include "phishlab/model/transformer.hpp"
#include "phishlab/nn/adamw.hpp"
#include "phishlab/nn/loss.hpp"
#include "phishlab/rng.hpp"

namespace phishlab::train {

using model::Checkpoint;
using model::LoraAdapter;
using nn::Tensor;
using tokenizer::TokenId;

enum class Stage { pretrain, lora };

struct TrainConfig {
    Stage stage = Stage::pretrain;
    std::size_t epochs = 5;        // lora
    std::size_t steps = 300;       // pretrain
    std::size_t batch_size = 8;
    double lr = 1e-3;
    double label_smoothing = 0.1;
    std::uint64_t seed = 0;
    std::size_t eval_every = 0;    // lora: extra validation rows every N steps; 0 = per epoch only
    double weight_decay = 0.01;
    double clip_norm = 1.0;
    std::size_t seq_len = 0;       // pretrain window; 0 = model max_seq_len
    std::size_t threads = 1;
    std::optional<model::LoraSpec> adapter;

    void validate() const {
        if (stage == Stage::lora && !adapter) {
            throw ValidationError("train config: stage 'lora' requires an adapter spec");
        }
        if (stage == Stage::pretrain && adapter) {
            throw ValidationError("train config: stage 'pretrain' does not take an adapter spec");
        }
        if (batch_size == 0) {
            throw ValidationError("train config: batch_size must be positive");
        }
        if (!(lr >= 0.0) || !(weight_decay >= 0.0)) {
            throw ValidationError("train config: lr and weight_decay must be non-negative");
        }
        if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
            throw ValidationError("train config: label_smoothing must lie in [0, 1)");
        }
        if (threads == 0) {
            throw ValidationError("train config: threads must be positive");
        }
        if (adapter) {
            adapter->validate();
        }
    }
};

struct TraceRow {
    std::size_t step = 0;
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;
};

/// CSV with header step,split,loss,accuracy.
inline std::string trace_csv(std::span<const TraceRow> rows) {
    std::string out = "step,split,loss,accuracy\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%zu,%s,%.9g,%.9g\n", r.step, r.split.c_str(), r.loss, r.accuracy);
        out += buf;
    }
    return out;
}

/// Mean loss over the first and last `window` train rows.
inline std::pair<double, double> head_tail_mean_loss(std::span<const TraceRow> rows, std::size_t window) {
    std::vector<double> train;
    for (const auto& r : rows) {
        if (r.split == "train") {
            train.push_back(r.loss);
        }
    }
    if (train.empty()) {
        return {0.0, 0.0};
    }
    const std::size_t w = std::min(window, train.size());
    const double head = std::accumulate(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(w), 0.0) / w;
    const double tail = std::accumulate(train.end() - static_cast<std::ptrdiff_t>(w), train.end(), 0.0) / w;
    return {head, tail};
}

namespace detail {

/// Runs job(worker, begin, end) over contiguous chunks of [0, n) on up to
/// `threads` workers. Worker w always gets the same chunk for a given
/// (n, threads), so per-worker accumulation followed by an in-order reduction
/// is deterministic for a fixed thread count.
template <class Job>
void parallel_chunks(std::size_t n, std::size_t threads, Job&& job) {
    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
    if (workers == 1) {
        job(std::size_t{0}, std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = n * w / workers;
        const std::size_t end = n * (w + 1) / workers;
        pool.emplace_back([&job, w, begin, end] { job(w, begin, end); });
    }
    for (auto& t : pool) {
        t.join();
    }
}

inline std::vector<Tensor<float>*> tensor_list(model::Weights<float>& w, const model::ModelConfig& c) {
    std::vector<Tensor<float>*> out;
    model::for_each_tensor(w, c, [&](const std::string&, Tensor<float>& t) { out.push_back(&t); });
    return out;
}

inline std::vector<Tensor<float>*> tensor_list(LoraAdapter<float>& a) {
    std::vector<Tensor<float>*> out;
    a.for_each_tensor([&](const std::string&, Tensor<float>& t) { out.push_back(&t); });
    return out;
}

inline void zero_all(const std::vector<Tensor<float>*>& ts) {
    for (auto* t : ts) {
        t->fill(0.0F);
    }
}

inline void add_all(const std::vector<Tensor<float>*>& dst, const std::vector<Tensor<float>*>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
        nn::add_inplace(*dst[i], *src[i]);
    }
}

inline nn::AdamWConfig adamw_config(const TrainConfig& cfg) {
    nn::AdamWConfig a;
    a.lr = cfg.lr;
    a.weight_decay = cfg.weight_decay;
    return a;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Per-example losses shared by the training loops and the gradient checks.

struct LmLoss {
    double loss = 0.0;
    std::size_t correct = 0;
};

/// Smoothed next-token loss of one window. When dbase is given,
/// grad_scale * d loss / d weights is accumulated into it.
template <class T>
LmLoss lm_loss(const model::Decoder<T>& dec, std::span<const TokenId> input, std::span<const TokenId> target,
               const nn::LossConfig& loss_cfg, T grad_scale, model::Weights<T>* dbase) {
    model::ForwardCache<T> cache;
    const auto hidden = dec.hidden(input, dbase != nullptr ? &cache : nullptr);
    const auto logits = dec.logits(hidden);
    auto loss = nn::cross_entropy_smoothed(logits, target, loss_cfg);
    LmLoss r{static_cast<double>(loss.loss), 0};
    for (std::size_t t = 0; t < target.size(); ++t) {
        const auto row = logits.row(t);
        r.correct += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == target[t];
    }
    if (dbase != nullptr) {
        nn::scale_inplace(loss.grad, grad_scale);
        Tensor<T> dhidden(hidden.shape());
        dec.logits_backward(hidden, loss.grad, dhidden, dbase);
        dec.backward(cache, dhidden, dbase, nullptr);
    }
    return r;
}

struct VerdictLoss {
    double loss = 0.0;
    double p = 0.0;
};

/// Class index into (VERDICT_TRUE, VERDICT_FALSE) for a label.
inline std::size_t verdict_class(int label) { return label == 1 ? 0 : 1; }

/// Smoothed 2-class loss on the verdict logits at the last prompt position.
/// When dlora is given, grad_scale * d loss / d adapter is accumulated into it.
template <class T>
VerdictLoss verdict_loss(const model::Decoder<T>& dec, const Tensor<T>& out_emb, std::span<const TokenId> ids,
                         int label, const nn::LossConfig& loss_cfg, T grad_scale, LoraAdapter<T>* dlora) {
    model::ForwardCache<T> cache;
    const auto hidden = dec.hidden(ids, dlora != nullptr ? &cache : nullptr);
    const std::size_t last = hidden.rows() - 1;
    Tensor<T> h_last({1, hidden.cols()}, std::vector<T>(hidden.row(last).begin(), hidden.row(last).end()));
    const auto logits = dec.logits_for(h_last, model::kVerdictIds);
    const std::size_t target = verdict_class(label);
    auto loss = nn::cross_entropy_smoothed(logits, std::span<const std::size_t>(&target, 1), loss_cfg);
    VerdictLoss r{static_cast<double>(loss.loss), model::verdict_probability(logits[0], logits[1])};
    if (dlora != nullptr) {
        Tensor<T> dhidden(hidden.shape());
        auto dh = dhidden.row(last);
        for (std::size_t j = 0; j < model::kVerdictIds.size(); ++j) {
            const T gj = loss.grad[j] * grad_scale;
            const auto e = out_emb.row(model::kVerdictIds[j]);
            for (std::size_t c = 0; c < dh.size(); ++c) {
                dh[c] += gj * e[c];
            }
        }
        dec.backward(cache, dhidden, nullptr, dlora);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Stage 1: causal language-model pretraining

struct PretrainResult {
    Checkpoint checkpoint;
    std::vector<TraceRow> trace;
};

/// Next-token prediction over contiguous windows of the concatenated token
/// streams. Each step draws batch_size window starts uniformly with
/// SplitMix64(seed); every base parameter is trainable. Gradients are
/// clipped to global norm clip_norm before the AdamW update.
inline PretrainResult pretrain(const Checkpoint& init, std::span<const std::vector<TokenId>> streams,
                               const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.stage != Stage::pretrain) {
        throw ValidationError("pretrain called with a non-pretrain config");
    }
    std::vector<TokenId> stream;
    for (const auto& s : streams) {
        stream.insert(stream.end(), s.begin(), s.end());
    }
    if (stream.size() < 2) {
        throw ValidationError("pretrain: corpus is empty");
    }
    const auto& mc = init.config;
    for (TokenId id : stream) {
        if (id >= mc.vocab_size) {
            throw ValidationError("pretrain: token id " + std::to_string(id) + " outside model vocabulary");
        }
    }
    const std::size_t window =
        std::min({cfg.seq_len == 0 ? mc.max_seq_len : cfg.seq_len, mc.max_seq_len, stream.size() - 1});

    PretrainResult res{init, {}};
    auto& weights = res.checkpoint.weights;
    auto grads = model::zeros_like<float>(mc);
    auto params = detail::tensor_list(weights, mc);
    auto grad_list = detail::tensor_list(grads, mc);
    std::vector<nn::ParamRef<float>> refs;
    for (std::size_t i = 0; i < params.size(); ++i) {
        refs.push_back({params[i], grad_list[i], true});
    }
    nn::AdamWState<float> state{detail::adamw_config(cfg), 0, {}, {}};
    const nn::LossConfig loss_cfg{cfg.label_smoothing, mc.vocab_size};
    const std::size_t workers = std::min(cfg.threads, cfg.batch_size);
    std::vector<model::Weights<float>> worker_grads(workers > 1 ? workers : 0, model::zeros_like<float>(mc));
    SplitMix64 rng(cfg.seed);
    const float inv_batch = 1.0F / static_cast<float>(cfg.batch_size);

    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        std::vector<std::size_t> starts(cfg.batch_size);
        for (auto& s : starts) {
            s = rng.below(stream.size() - window);
        }
        detail::zero_all(grad_list);
        std::vector<double> worker_loss(std::max<std::size_t>(workers, 1), 0.0);
        std::vector<std::size_t> worker_correct(std::max<std::size_t>(workers, 1), 0);
        const model::Decoder<float> dec(mc, weights, nullptr);
        detail::parallel_chunks(cfg.batch_size, workers, [&](std::size_t w, std::size_t begin, std::size_t end) {
            model::Weights<float>& g = workers > 1 ? worker_grads[w] : grads;
            if (workers > 1) {
                detail::zero_all(detail::tensor_list(g, mc));
            }
            for (std::size_t b = begin; b < end; ++b) {
                const std::span<const TokenId> input(stream.data() + starts[b], window);
                const std::span<const TokenId> target(stream.data() + starts[b] + 1, window);
                const auto r = lm_loss(dec, input, target, loss_cfg, inv_batch, &g);
                worker_loss[w] += r.loss;
                worker_correct[w] += r.correct;
            }
        });
        if (workers > 1) {
            for (auto& wg : worker_grads) {
                detail::add_all(grad_list, detail::tensor_list(wg, mc));
            }
        }
        nn::clip_grad_norm<float>(grad_list, cfg.clip_norm);
        nn::adamw_step(refs, state);
        const double loss = std::accumulate(worker_loss.begin(), worker_loss.end(), 0.0) / cfg.batch_size;
        const double acc = static_cast<double>(std::accumulate(worker_correct.begin(), worker_correct.end(),
                                                               std::size_t{0})) /
                           static_cast<double>(cfg.batch_size * window);
        res.trace.push_back({step, "train", loss, acc});
    }
    return res;
}

// ---------------------------------------------------------------------------
// Stage 2: frozen-base LoRA fine-tuning for the verdict

struct LabeledPrompt {
    std::vector<TokenId> ids;
    int label = 0;
};

struct PromptEval {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<double> scores;
};

/// Mean smoothed verdict loss and accuracy at threshold 0.5.
inline PromptEval evaluate_prompts(const Checkpoint& base, const LoraAdapter<float>* adapter,
                                   std::span<const LabeledPrompt> prompts, double label_smoothing) {
    PromptEval ev;
    if (prompts.empty()) {
        return ev;
    }
    const model::Decoder<float> dec(base.config, base.weights, adapter);
    const nn::LossConfig loss_cfg{label_smoothing, 2};
    const auto& out_emb = base.weights.output_embedding(base.config);
    std::size_t correct = 0;
    for (const auto& p : prompts) {
        const auto r = verdict_loss<float>(dec, out_emb, p.ids, p.label, loss_cfg, 1.0F, nullptr);
        ev.loss += r.loss;
        ev.scores.push_back(r.p);
        correct += (r.p >= 0.5) == (p.label == 1) ? 1 : 0;
    }
    ev.loss /= static_cast<double>(prompts.size());
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(prompts.size());
    return ev;
}

struct FinetuneResult {
    LoraAdapter<float> adapter;  // best validation epoch
    std::vector<TraceRow> trace;
    std::size_t best_epoch = 0;
    double best_valid_accuracy = 0.0;
    double best_valid_loss = 0.0;
    std::size_t steps = 0;
};

/// Trains only the adapter factors; the base checkpoint is taken by const
/// reference and never written. The loss is 2-class label-smoothed cross
/// entropy on (VERDICT_TRUE, VERDICT_FALSE) logits at the last prompt
/// position. Examples are reshuffled every epoch with SplitMix64(seed). The
/// adapter from the epoch with the best validation accuracy (ties: lower
/// loss, then earlier) is returned.
inline FinetuneResult finetune_lora(const Checkpoint& base, LoraAdapter<float> adapter,
                                    std::span<const LabeledPrompt> train_set, std::span<const LabeledPrompt> valid_set,
                                    const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.stage != Stage::lora) {
        throw ValidationError("finetune_lora called with a non-lora config");
    }
    if (adapter.spec != *cfg.adapter) {
        throw ValidationError("adapter spec does not match train config");
    }
    model::validate_adapter(adapter, base.config);
    if (train_set.empty()) {
        throw ValidationError("finetune_lora: training set is empty");
    }
    for (const auto& p : train_set) {
        if (p.label != 0 && p.label != 1) {
            throw ValidationError("finetune_lora: label outside {0,1}");
        }
    }
    const auto& mc = base.config;
    FinetuneResult res{adapter, {}, 0, -1.0, 0.0, 0};
    auto grads = model::zero_adapter<float>(mc, adapter.spec);
    auto params = detail::tensor_list(adapter);
    auto grad_list = detail::tensor_list(grads);
    std::vector<nn::ParamRef<float>> refs;
    for (std::size_t i = 0; i < params.size(); ++i) {
        refs.push_back({params[i], grad_list[i], true});
    }
    nn::AdamWState<float> state{detail::adamw_config(cfg), 0, {}, {}};
    const nn::LossConfig loss_cfg{cfg.label_smoothing, 2};
    const auto& out_emb = base.weights.output_embedding(mc);
    const std::size_t workers = std::min(cfg.threads, cfg.batch_size);
    std::vector<LoraAdapter<float>> worker_grads(workers > 1 ? workers : 0, model::zero_adapter<float>(mc, adapter.spec));
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(cfg.seed);
    std::size_t step = 0;

    auto validate_now = [&](std::size_t at_step) {
        const auto ev = evaluate_prompts(base, &adapter, valid_set, cfg.label_smoothing);
        res.trace.push_back({at_step, "valid", ev.loss, ev.accuracy});
        return ev;
    };

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - start);
            const float inv_batch = 1.0F / static_cast<float>(count);
            detail::zero_all(grad_list);
            const model::Decoder<float> dec(mc, base.weights, &adapter);
            const std::size_t active = std::min(workers, count);
            std::vector<double> worker_loss(std::max<std::size_t>(active, 1), 0.0);
            std::vector<std::size_t> worker_correct(std::max<std::size_t>(active, 1), 0);
            detail::parallel_chunks(count, active, [&](std::size_t w, std::size_t begin, std::size_t end) {
                LoraAdapter<float>& g = active > 1 ? worker_grads[w] : grads;
                if (active > 1) {
                    detail::zero_all(detail::tensor_list(g));
                }
                for (std::size_t k = begin; k < end; ++k) {
                    const auto& ex = train_set[order[start + k]];
                    const auto r = verdict_loss(dec, out_emb, ex.ids, ex.label, loss_cfg, inv_batch, &g);
                    worker_loss[w] += r.loss;
                    worker_correct[w] += (r.p >= 0.5) == (ex.label == 1) ? 1 : 0;
                }
            });
            if (active > 1) {
                for (std::size_t w = 0; w < active; ++w) {
                    detail::add_all(grad_list, detail::tensor_list(worker_grads[w]));
                }
            }
            nn::clip_grad_norm<float>(grad_list, cfg.clip_norm);
            nn::adamw_step(refs, state);
            ++step;
            const double loss = std::accumulate(worker_loss.begin(), worker_loss.end(), 0.0) / count;
            const double acc = static_cast<double>(std::accumulate(worker_correct.begin(), worker_correct.end(),
                                                                   std::size_t{0})) /
                               static_cast<double>(count);
            res.trace.push_back({step, "train", loss, acc});
            if (cfg.eval_every > 0 && step % cfg.eval_every == 0 && !valid_set.empty()) {
                validate_now(step);
            }
        }
        if (valid_set.empty()) {
            res.adapter = adapter;
            res.best_epoch = epoch;
            continue;
        }
        const auto ev = validate_now(step);
        const bool better = ev.accuracy > res.best_valid_accuracy ||
                            (ev.accuracy == res.best_valid_accuracy && ev.loss < res.best_valid_loss);
        if (res.best_epoch == 0 || better) {
            res.adapter = adapter;
            res.best_epoch = epoch;
            res.best_valid_accuracy = ev.accuracy;
            res.best_valid_loss = ev.loss;
        }
    }
    res.steps = step;
    return res;
}

} // namespace phishlab::train
