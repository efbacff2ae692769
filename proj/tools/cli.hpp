#pragma once

// phishlab command-line driver. Every command parses and validates its flags
// before touching the filesystem; machine-readable output is JSON on stdout,
// logs go to stderr. Exit codes: 0 success, 1 validation error, 2 I/O or
// corruption error.

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "phishlab/config_file.hpp"
#include "phishlab/phishlab.hpp"

namespace phishlab::cli {

enum class LogLevel { error = 0, info = 1, debug = 2 };

inline LogLevel log_level_from_env() {
    const char* v = std::getenv("PHISHLAB_LOG");
    if (v == nullptr) {
        return LogLevel::info;
    }
    const std::string s(v);
    if (s == "error") {
        return LogLevel::error;
    }
    if (s == "debug") {
        return LogLevel::debug;
    }
    return LogLevel::info;
}

class Logger {
public:
    Logger(std::ostream& err, LogLevel level) : err_(err), level_(level) {}
    void error(const std::string& m) const { emit(LogLevel::error, "error", m); }
    void info(const std::string& m) const { emit(LogLevel::info, "info", m); }
    void debug(const std::string& m) const { emit(LogLevel::debug, "debug", m); }

private:
    void emit(LogLevel at, const char* tag, const std::string& m) const {
        if (static_cast<int>(at) <= static_cast<int>(level_)) {
            err_ << "[phishlab " << tag << "] " << m << "\n";
        }
    }
    std::ostream& err_;
    LogLevel level_;
};

/// Flag values shared across commands. Empty strings / unset optionals mean
/// "not given".
struct Options {
    std::string model, adapter, data, out, config, tokenizer, valid, trace, text, pool, table, name, fractions, format;
    std::string targets = "all";
    std::optional<std::uint64_t> seed;
    std::size_t threads = 1;
    double threshold = 0.5;
    std::optional<std::size_t> rank;
    std::optional<double> alpha;
    std::optional<std::size_t> vocab_size, steps, epochs, batch_size, seq_len, eval_every, n_per_class;
    std::optional<double> lr, label_smoothing, cue_strength, weight_decay;
    bool as_prompts = false;
};

namespace detail {

inline void require(bool ok, const std::string& message) {
    if (!ok) {
        throw ValidationError(message);
    }
}

inline void write_json(std::ostream& out, const nlohmann::ordered_json& j) { out << j.dump(2) << "\n"; }

inline model::ModelConfig model_config_from(const Options& o) {
    if (o.config.empty()) {
        return {};
    }
    const auto doc = config::load(o.config);
    return model::config_from_json(config::model_section(doc));
}

inline std::optional<nlohmann::json> config_section(const Options& o, const char* name) {
    if (o.config.empty()) {
        return std::nullopt;
    }
    const auto doc = config::load(o.config);
    if (const auto* s = config::section(doc, name)) {
        return *s;
    }
    return std::nullopt;
}

template <class T>
T pick(const std::optional<T>& flag, const std::optional<nlohmann::json>& section, const char* key, T fallback) {
    if (flag) {
        return *flag;
    }
    if (section && section->contains(key)) {
        try {
            return section->at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(std::string("config key '") + key + "': " + e.what());
        }
    }
    return fallback;
}

inline model::LoraSpec lora_spec_from(const Options& o, const std::optional<nlohmann::json>& section) {
    model::LoraSpec spec;
    spec.rank = pick(o.rank, section, "rank", spec.rank);
    spec.alpha = pick(o.alpha, section, "alpha", spec.alpha);
    if (o.targets != "all" || !section || !section->contains("targets")) {
        spec.targets = model::parse_targets(o.targets);
    } else {
        spec.targets.clear();
        for (const auto& t : section->at("targets")) {
            spec.targets.push_back(model::target_from_name(t.get<std::string>()));
        }
    }
    spec.validate();
    return spec;
}

inline tokenizer::Vocabulary vocabulary_for(const Options& o, const model::Checkpoint& ckpt) {
    if (!o.tokenizer.empty()) {
        return tokenizer::load_vocabulary(o.tokenizer);
    }
    if (ckpt.vocabulary) {
        return *ckpt.vocabulary;
    }
    throw ValidationError("checkpoint carries no tokenizer; pass --tokenizer");
}

inline std::optional<model::LoraAdapter<float>> adapter_for(const Options& o, const model::Checkpoint& ckpt) {
    if (o.adapter.empty()) {
        return std::nullopt;
    }
    auto loaded = model::load_adapter(o.adapter);
    if (loaded.base_config != ckpt.config) {
        throw ValidationError("adapter was trained for a different model config");
    }
    model::validate_adapter(loaded.adapter, ckpt.config);
    return std::move(loaded.adapter);
}

inline corpus::SplitSpec split_spec_from(const Options& o) {
    corpus::SplitSpec spec;
    spec.seed = *o.seed;
    if (!o.fractions.empty()) {
        std::vector<double> f;
        std::stringstream ss(o.fractions);
        std::string item;
        while (std::getline(ss, item, ',')) {
            try {
                std::size_t used = 0;
                f.push_back(std::stod(item, &used));
                require(used == item.size(), "bad fraction '" + item + "'");
            } catch (const std::logic_error&) {
                throw ValidationError("bad fraction '" + item + "'");
            }
        }
        require(f.size() == 3, "--fractions needs three comma-separated values");
        spec.train_frac = f[0];
        spec.valid_frac = f[1];
        spec.test_frac = f[2];
    }
    spec.validate();
    return spec;
}

inline std::vector<std::vector<tokenizer::TokenId>> token_streams(const tokenizer::Vocabulary& vocab,
                                                                  const std::vector<corpus::Sample>& samples,
                                                                  bool as_prompts) {
    std::vector<std::vector<tokenizer::TokenId>> streams;
    for (const auto& s : samples) {
        streams.push_back(tokenizer::encode(vocab, as_prompts ? model::prompt_text(s.text) : s.text, true));
    }
    return streams;
}

inline std::vector<train::LabeledPrompt> prompts(const tokenizer::Vocabulary& vocab,
                                                 const std::vector<corpus::Sample>& samples) {
    std::vector<train::LabeledPrompt> out;
    for (const auto& s : samples) {
        out.push_back({model::build_prompt(vocab, s.text), s.label});
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Commands. Each returns normally on success and throws on failure.

inline void cmd_synth(const Options& o, std::ostream& out, const Logger& log) {
    synthgen::SynthSpec spec{o.n_per_class.value_or(250), *o.seed, o.cue_strength.value_or(1.0)};
    detail::require(spec.n_per_class >= 1, "--n-per-class must be at least 1");
    detail::require(spec.cue_strength >= 0.0 && spec.cue_strength <= 1.0, "--cue-strength must lie in [0, 1]");
    const auto pool = o.pool.empty() ? synthgen::default_pool() : synthgen::load_pool(o.pool);
    const auto samples = synthgen::generate(spec, pool);
    corpus::save_jsonl(o.out, samples);
    log.info("wrote " + std::to_string(samples.size()) + " samples to " + o.out);
    detail::write_json(out, {{"out", o.out}, {"n", samples.size()}, {"n_per_class", spec.n_per_class}});
}

inline void cmd_preprocess(const Options& o, std::ostream& out, const Logger& log) {
    std::optional<corpus::Format> fmt;
    if (!o.format.empty()) {
        detail::require(o.format == "jsonl" || o.format == "csv", "--format must be jsonl or csv");
        fmt = o.format == "csv" ? corpus::Format::csv : corpus::Format::jsonl;
    }
    const auto raw = corpus::load_dataset(o.data, fmt.value_or(corpus::format_from_path(o.data)));
    const auto norm = corpus::normalize_all(raw);
    corpus::save_jsonl(o.out, norm);
    log.info("normalized " + std::to_string(norm.size()) + " samples");
    detail::write_json(out, {{"out", o.out}, {"n", norm.size()}});
}

inline void cmd_split(const Options& o, std::ostream& out, const Logger& log) {
    const auto spec = detail::split_spec_from(o);
    const auto samples = corpus::load_dataset(o.data);
    const auto split = corpus::stratified_split(samples, spec);
    const std::filesystem::path dir(o.out);
    std::filesystem::create_directories(dir);
    corpus::save_jsonl(dir / "train.jsonl", split.train);
    corpus::save_jsonl(dir / "valid.jsonl", split.valid);
    corpus::save_jsonl(dir / "test.jsonl", split.test);
    io::write_file_atomic(dir / "manifest.json", corpus::split_manifest_json(split, spec));
    log.info("split into " + o.out);
    detail::write_json(out, {{"train", split.train.size()}, {"valid", split.valid.size()}, {"test", split.test.size()}});
}

inline void cmd_train_tokenizer(const Options& o, std::ostream& out, const Logger& log) {
    const std::size_t vocab_size = o.vocab_size.value_or(512);
    detail::require(vocab_size >= tokenizer::kMinVocabSize,
                    "--vocab-size must be at least " + std::to_string(tokenizer::kMinVocabSize));
    const auto samples = corpus::load_dataset(o.data);
    std::vector<std::string> texts;
    for (const auto& s : samples) {
        texts.push_back(o.as_prompts ? model::prompt_text(s.text) : s.text);
    }
    const auto vocab = tokenizer::train_bpe(texts, vocab_size);
    tokenizer::save_vocabulary(o.out, vocab);
    log.info("trained vocabulary of " + std::to_string(vocab.size()) + " tokens");
    detail::write_json(out, {{"out", o.out}, {"vocab_size", vocab.size()}, {"merges", vocab.merges().size()}});
}

inline void cmd_pretrain(const Options& o, std::ostream& out, const Logger& log) {
    const auto section = detail::config_section(o, "pretrain");
    train::TrainConfig cfg;
    cfg.stage = train::Stage::pretrain;
    cfg.seed = *o.seed;
    cfg.threads = o.threads;
    cfg.steps = detail::pick(o.steps, section, "steps", cfg.steps);
    cfg.batch_size = detail::pick(o.batch_size, section, "batch_size", cfg.batch_size);
    cfg.lr = detail::pick(o.lr, section, "lr", cfg.lr);
    cfg.label_smoothing = detail::pick(o.label_smoothing, section, "label_smoothing", cfg.label_smoothing);
    cfg.weight_decay = detail::pick(o.weight_decay, section, "weight_decay", cfg.weight_decay);
    cfg.seq_len = detail::pick(o.seq_len, section, "seq_len", cfg.seq_len);
    cfg.validate();
    const auto mc = detail::model_config_from(o);
    mc.validate();

    const auto vocab = tokenizer::load_vocabulary(o.tokenizer);
    detail::require(vocab.size() <= mc.vocab_size, "tokenizer has " + std::to_string(vocab.size()) +
                                                       " tokens but model vocab_size is " +
                                                       std::to_string(mc.vocab_size));
    model::Checkpoint init = o.model.empty() ? model::init_model(mc, *o.seed) : model::load_checkpoint(o.model);
    const auto samples = corpus::load_dataset(o.data);
    const auto streams = detail::token_streams(vocab, samples, o.as_prompts);
    log.info("pretraining for " + std::to_string(cfg.steps) + " steps");
    auto result = train::pretrain(init, streams, cfg);
    result.checkpoint.vocabulary = vocab;
    model::save_checkpoint(o.out, result.checkpoint);
    if (!o.trace.empty()) {
        io::write_file_atomic(o.trace, train::trace_csv(result.trace));
    }
    const double first = result.trace.empty() ? 0.0 : result.trace.front().loss;
    const double last = result.trace.empty() ? 0.0 : result.trace.back().loss;
    detail::write_json(out, {{"out", o.out},
                             {"steps", cfg.steps},
                             {"initial_loss", first},
                             {"final_loss", last},
                             {"payload_hash", result.checkpoint.payload_hash()}});
}

inline void cmd_finetune(const Options& o, std::ostream& out, const Logger& log) {
    const auto section = detail::config_section(o, "lora");
    train::TrainConfig cfg;
    cfg.stage = train::Stage::lora;
    cfg.seed = *o.seed;
    cfg.threads = o.threads;
    cfg.epochs = detail::pick(o.epochs, section, "epochs", cfg.epochs);
    cfg.batch_size = detail::pick(o.batch_size, section, "batch_size", cfg.batch_size);
    cfg.lr = detail::pick(o.lr, section, "lr", cfg.lr);
    cfg.label_smoothing = detail::pick(o.label_smoothing, section, "label_smoothing", cfg.label_smoothing);
    cfg.weight_decay = detail::pick(o.weight_decay, section, "weight_decay", cfg.weight_decay);
    cfg.eval_every = detail::pick(o.eval_every, section, "eval_every", cfg.eval_every);
    cfg.adapter = detail::lora_spec_from(o, section);
    cfg.validate();

    const auto base = model::load_checkpoint(o.model);
    const auto vocab = detail::vocabulary_for(o, base);
    const auto train_samples = corpus::normalize_all(corpus::load_dataset(o.data));
    const auto valid_samples =
        o.valid.empty() ? std::vector<corpus::Sample>{} : corpus::normalize_all(corpus::load_dataset(o.valid));
    const auto train_set = detail::prompts(vocab, train_samples);
    const auto valid_set = detail::prompts(vocab, valid_samples);
    const std::string hash_before = base.payload_hash();
    auto adapter = model::init_adapter(base.config, *cfg.adapter, *o.seed);
    log.info("fine-tuning adapter for " + std::to_string(cfg.epochs) + " epochs on " +
             std::to_string(train_set.size()) + " samples");
    const auto result = train::finetune_lora(base, std::move(adapter), train_set, valid_set, cfg);
    const std::string hash_after = base.payload_hash();
    model::save_adapter(o.out, result.adapter, base.config);
    if (!o.trace.empty()) {
        io::write_file_atomic(o.trace, train::trace_csv(result.trace));
    }
    const auto pc = model::count_params(base.config, result.adapter.spec);
    nlohmann::ordered_json j{{"out", o.out},
                             {"steps", result.steps},
                             {"best_epoch", result.best_epoch},
                             {"trainable_params", pc.trainable},
                             {"base_hash_unchanged", hash_before == hash_after}};
    if (!valid_set.empty()) {
        j["best_valid_accuracy"] = result.best_valid_accuracy;
        j["best_valid_loss"] = result.best_valid_loss;
    }
    detail::write_json(out, j);
}

inline void cmd_merge(const Options& o, std::ostream& out, const Logger& log) {
    detail::require(!o.adapter.empty(), "merge requires --adapter");
    const auto base = model::load_checkpoint(o.model);
    const auto adapter = detail::adapter_for(o, base);
    const auto merged = model::merge_adapter(base, *adapter);
    model::save_checkpoint(o.out, merged);
    log.info("merged adapter into " + o.out);
    detail::write_json(out, {{"out", o.out}, {"payload_hash", merged.payload_hash()}});
}

inline void cmd_infer(const Options& o, std::ostream& out, const Logger&) {
    detail::require(o.threshold >= 0.0 && o.threshold <= 1.0, "--threshold must lie in [0, 1]");
    const auto base = model::load_checkpoint(o.model);
    const auto vocab = detail::vocabulary_for(o, base);
    const auto adapter = detail::adapter_for(o, base);
    const auto prompt = model::build_prompt(vocab, corpus::normalize(o.text));
    const auto v = model::classify(base, adapter ? &*adapter : nullptr, prompt, o.threshold);
    detail::write_json(out, {{"p", v.p}, {"verdict", v.phishing}});
}

inline eval::EvalReport run_evaluation(const Options& o) {
    const auto base = model::load_checkpoint(o.model);
    const auto vocab = detail::vocabulary_for(o, base);
    const auto adapter = detail::adapter_for(o, base);
    const auto samples = corpus::normalize_all(corpus::load_dataset(o.data));
    const std::string name = o.name.empty() ? std::filesystem::path(o.model).stem().string() : o.name;
    return eval::evaluate(base, adapter ? &*adapter : nullptr, vocab, samples, o.threshold, name,
                          std::filesystem::path(o.data).stem().string());
}

inline void cmd_evaluate(const Options& o, std::ostream& out, const Logger& log) {
    detail::require(o.threshold >= 0.0 && o.threshold <= 1.0, "--threshold must lie in [0, 1]");
    const auto report = run_evaluation(o);
    const std::string json = eval::to_json(report).dump(2) + "\n";
    if (!o.out.empty()) {
        io::write_file_atomic(o.out, json);
    }
    if (!o.table.empty()) {
        io::write_file_atomic(o.table, eval::format_table(std::span<const eval::EvalReport>(&report, 1)));
    }
    log.info("evaluated " + std::to_string(report.confusion.total()) + " samples");
    out << json;
}

inline void cmd_roc(const Options& o, std::ostream& out, const Logger&) {
    const auto report = run_evaluation(o);
    std::vector<int> labels;
    const auto samples = corpus::load_dataset(o.data);
    for (const auto& s : samples) {
        labels.push_back(s.label);
    }
    const auto curve = eval::roc(labels, report.scores);
    io::write_file_atomic(o.out, eval::roc_csv(curve));
    detail::write_json(out, {{"out", o.out},
                             {"points", curve.points.size()},
                             {"auc", curve.auc},
                             {"auc_mann_whitney", curve.auc_mann_whitney}});
}

inline void cmd_count_params(const Options& o, std::ostream& out, const Logger&) {
    const auto mc = detail::model_config_from(o);
    const auto section = detail::config_section(o, "lora");
    std::optional<model::LoraSpec> spec;
    if (o.rank || (section && section->contains("rank"))) {
        spec = detail::lora_spec_from(o, section);
    }
    const auto pc = model::count_params(mc, spec);
    nlohmann::ordered_json j{{"total", pc.total}, {"trainable", pc.trainable}, {"fraction", pc.fraction}};
    if (spec) {
        j["rank"] = spec->rank;
    }
    detail::write_json(out, j);
}

// ---------------------------------------------------------------------------

/// Runs one command. argv[0] is the program name.
inline int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
    const Logger log(err, log_level_from_env());
    CLI::App app{"phishlab: phishing detection with a small decoder and LoRA adapters", "phishlab"};
    app.require_subcommand(1);
    Options o;

    auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Random seed (required)")->required(); };
    auto add_threads = [&](CLI::App* c) {
        c->add_option("--threads", o.threads, "Worker threads; results are deterministic per thread count")
            ->check(CLI::PositiveNumber);
    };
    auto add_lora = [&](CLI::App* c) {
        c->add_option("--rank", o.rank, "Adapter rank")->check(CLI::PositiveNumber);
        c->add_option("--alpha", o.alpha, "Adapter alpha (scale = alpha / rank)");
        c->add_option("--targets", o.targets, "Comma-separated targets among wq,wk,wv,wo,w_up,w_down, or 'all'");
    };

    std::map<std::string, std::function<void()>> handlers;
    auto sub = [&](const char* name, const char* help, auto&& fn) {
        auto* c = app.add_subcommand(name, help);
        handlers[name] = [&o, &out, &log, fn] { fn(o, out, log); };
        return c;
    };

    auto* synth = sub("synth", "Generate a synthetic labeled corpus (JSON Lines)", cmd_synth);
    synth->add_option("--out", o.out, "Output .jsonl")->required();
    add_seed(synth);
    synth->add_option("--n-per-class", o.n_per_class, "Samples per class");
    synth->add_option("--cue-strength", o.cue_strength, "P(phishing sample carries a cue phrase)");
    synth->add_option("--pool", o.pool, "Template pool JSON");

    auto* pre = sub("preprocess", "Normalize a JSONL/CSV dataset", cmd_preprocess);
    pre->add_option("--data", o.data, "Input dataset")->required();
    pre->add_option("--out", o.out, "Output .jsonl")->required();
    pre->add_option("--format", o.format, "Input format: jsonl or csv (default: by extension)");

    auto* split = sub("split", "Stratified train/valid/test split", cmd_split);
    split->add_option("--data", o.data, "Input dataset")->required();
    split->add_option("--out", o.out, "Output directory")->required();
    add_seed(split);
    split->add_option("--fractions", o.fractions, "train,valid,test fractions (default 0.8,0.1,0.1)");

    auto* tok = sub("train-tokenizer", "Train the byte-level BPE vocabulary", cmd_train_tokenizer);
    tok->add_option("--data", o.data, "Normalized dataset")->required();
    tok->add_option("--out", o.out, "Output vocabulary JSON")->required();
    tok->add_option("--vocab-size", o.vocab_size, "Target vocabulary size (default 512)");
    tok->add_flag("--as-prompts", o.as_prompts, "Train on texts wrapped in the classification prompt");

    auto* pt = sub("pretrain", "Stage 1: causal-LM pretraining of the base model", cmd_pretrain);
    pt->add_option("--data", o.data, "Normalized dataset (texts only are used)")->required();
    pt->add_option("--tokenizer", o.tokenizer, "Vocabulary JSON")->required();
    pt->add_option("--out", o.out, "Output checkpoint")->required();
    pt->add_option("--model", o.model, "Continue from this checkpoint instead of a fresh init");
    pt->add_option("--config", o.config, "TOML/JSON config with [model] and [pretrain] tables");
    pt->add_option("--steps", o.steps, "Optimizer steps");
    pt->add_option("--batch-size", o.batch_size, "Windows per step")->check(CLI::PositiveNumber);
    pt->add_option("--seq-len", o.seq_len, "Window length");
    pt->add_option("--lr", o.lr, "AdamW learning rate");
    pt->add_option("--weight-decay", o.weight_decay, "AdamW decoupled weight decay");
    pt->add_option("--label-smoothing", o.label_smoothing, "Label smoothing epsilon");
    pt->add_option("--trace", o.trace, "Write loss trace CSV here");
    pt->add_flag("--as-prompts", o.as_prompts, "Wrap texts in the classification prompt");
    add_seed(pt);
    add_threads(pt);

    auto* ft = sub("finetune-lora", "Stage 2: frozen-base LoRA fine-tuning", cmd_finetune);
    ft->add_option("--model", o.model, "Base checkpoint")->required();
    ft->add_option("--data", o.data, "Training dataset")->required();
    ft->add_option("--valid", o.valid, "Validation dataset");
    ft->add_option("--out", o.out, "Output adapter")->required();
    ft->add_option("--tokenizer", o.tokenizer, "Vocabulary JSON (default: the checkpoint's)");
    ft->add_option("--config", o.config, "TOML/JSON config with a [lora] table");
    ft->add_option("--epochs", o.epochs, "Epochs");
    ft->add_option("--batch-size", o.batch_size, "Examples per step")->check(CLI::PositiveNumber);
    ft->add_option("--lr", o.lr, "AdamW learning rate");
    ft->add_option("--weight-decay", o.weight_decay, "AdamW decoupled weight decay");
    ft->add_option("--label-smoothing", o.label_smoothing, "Label smoothing epsilon");
    ft->add_option("--eval-every", o.eval_every, "Extra validation every N steps");
    ft->add_option("--trace", o.trace, "Write loss/metric trace CSV here");
    add_lora(ft);
    add_seed(ft);
    add_threads(ft);

    auto* mg = sub("merge", "Bake an adapter into a standalone checkpoint", cmd_merge);
    mg->add_option("--model", o.model, "Base checkpoint")->required();
    mg->add_option("--adapter", o.adapter, "Adapter")->required();
    mg->add_option("--out", o.out, "Output checkpoint")->required();

    auto* inf = sub("infer", "Classify one text", cmd_infer);
    inf->add_option("--model", o.model, "Checkpoint")->required();
    inf->add_option("--adapter", o.adapter, "Adapter");
    inf->add_option("--tokenizer", o.tokenizer, "Vocabulary JSON (default: the checkpoint's)");
    inf->add_option("--text", o.text, "Raw text")->required();
    inf->add_option("--threshold", o.threshold, "Phishing if p >= threshold");

    auto* ev = sub("evaluate", "Metrics report on a labeled dataset", cmd_evaluate);
    ev->add_option("--model", o.model, "Checkpoint")->required();
    ev->add_option("--adapter", o.adapter, "Adapter");
    ev->add_option("--tokenizer", o.tokenizer, "Vocabulary JSON (default: the checkpoint's)");
    ev->add_option("--data", o.data, "Labeled dataset")->required();
    ev->add_option("--out", o.out, "Report JSON");
    ev->add_option("--table", o.table, "Aligned text table");
    ev->add_option("--name", o.name, "Model name in the report");
    ev->add_option("--threshold", o.threshold, "Phishing if p >= threshold");

    auto* rc = sub("roc", "ROC curve CSV (threshold,fpr,tpr)", cmd_roc);
    rc->add_option("--model", o.model, "Checkpoint")->required();
    rc->add_option("--adapter", o.adapter, "Adapter");
    rc->add_option("--tokenizer", o.tokenizer, "Vocabulary JSON (default: the checkpoint's)");
    rc->add_option("--data", o.data, "Labeled dataset")->required();
    rc->add_option("--out", o.out, "Output CSV")->required();

    auto* cp = sub("count-params", "Total/trainable parameter accounting", cmd_count_params);
    cp->add_option("--config", o.config, "TOML/JSON model config")->required();
    add_lora(cp);

    std::vector<std::string> args(argv.rbegin(), argv.rend() - (argv.empty() ? 0 : 1));
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return 1;
    }
    try {
        handlers.at(app.get_subcommands().front()->get_name())();
        return 0;
    } catch (const ValidationError& e) {
        log.error(e.what());
        return 1;
    } catch (const IoError& e) {
        log.error(e.what());
        return 2;
    } catch (const CorruptionError& e) {
        log.error(e.what());
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        log.error(e.what());
        return 2;
    } catch (const std::exception& e) {
        log.error(std::string("internal error: ") + e.what());
        return 2;
    }
}

} // namespace phishlab::cli
