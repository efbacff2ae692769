// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>

#include "cli.hpp"
#include "support.hpp"

using namespace phishlab;
using phishlab::testing::TempDir;
using tokenizer::TokenId;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + std::string("FAILED ") + what;
        }
    }
    void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

int cli_run(std::vector<std::string> args) {
    args.insert(args.begin(), "phishlab");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (code != 0) {
        std::fprintf(stderr, "command '%s' failed (%d): %s\n", args[1].c_str(), code, err.str().c_str());
    }
    return code;
}

std::string data_dir() { return PHISHLAB_DATA_DIR; }

std::vector<train::TraceRow> parse_trace(const std::string& csv) {
    std::vector<train::TraceRow> rows;
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string step, split, loss, acc;
        std::getline(ls, step, ',');
        std::getline(ls, split, ',');
        std::getline(ls, loss, ',');
        std::getline(ls, acc, ',');
        rows.push_back({std::stoul(step), split, std::stod(loss), std::stod(acc)});
    }
    return rows;
}

void check_metrics_row(Outcome& o, const eval::ConfusionMatrix& cm, std::array<double, 4> want, const char* label) {
    const auto m = eval::metrics(cm);
    const std::array<double, 4> got = {m.accuracy, m.precision, m.recall, m.f1};
    const char* names[] = {"accuracy", "precision", "recall", "f1"};
    for (std::size_t i = 0; i < 4; ++i) {
        o.require(std::abs(got[i] - want[i]) <= 5e-4 && eval::round_half_up(got[i]) == want[i],
                  std::string(label) + " " + names[i] + " = " + fmt("%.6f", got[i]));
    }
    o.note(std::string(label) + " (" + fmt("%.3f", eval::round_half_up(m.accuracy)) + ", " +
           fmt("%.3f", eval::round_half_up(m.precision)) + ", " + fmt("%.3f", eval::round_half_up(m.recall)) + ", " +
           fmt("%.3f", eval::round_half_up(m.f1)) + ")");
}

Outcome criterion1() {
    Outcome o;
    check_metrics_row(o, {20, 1, 19, 0}, {0.975, 0.952, 1.000, 0.976}, "Phishsense");
    check_metrics_row(o, {11, 6, 14, 9}, {0.625, 0.647, 0.550, 0.595}, "BERT");
    return o;
}

Outcome criterion2() {
    Outcome o;
    check_metrics_row(o, {18, 10, 10, 2}, {0.700, 0.643, 0.900, 0.750}, "Phishsense");
    return o;
}

Outcome criterion3() {
    Outcome o;
    const auto doc = config::load(data_dir() + "/../configs/reference.toml");
    const auto cfg = model::config_from_json(config::model_section(doc));
    const auto pc = model::count_params(cfg, model::LoraSpec{});
    o.require(pc.total == 1334904832ULL, "total = " + std::to_string(pc.total));
    o.require(pc.trainable == 4718592ULL, "trainable = " + std::to_string(pc.trainable));
    o.require(pc.fraction >= 0.003 && pc.fraction <= 0.006, "fraction out of range");
    o.note("total " + std::to_string(pc.total) + ", trainable " + std::to_string(pc.trainable) + ", fraction " +
           fmt("%.7f", pc.fraction));
    return o;
}

Outcome criterion4() {
    Outcome o;
    double worst = 0.0;
    std::string worst_name;
    std::size_t checks = 0;
    for (const auto& c : phishlab::testing::grad_cases()) {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            const double e = c.run(seed);
            ++checks;
            if (e > worst) {
                worst = e;
                worst_name = c.name;
            }
            o.require(e <= 1e-4, std::string(c.name) + " seed " + std::to_string(seed) + " error " + fmt("%.3e", e));
        }
    }
    o.note(std::to_string(checks) + " checks (" + std::to_string(phishlab::testing::grad_cases().size()) +
           " layers x 5 seeds), max rel error " + fmt("%.2e", worst) + " (" + worst_name + ")");
    return o;
}

Outcome criterion5() {
    Outcome o;
    const model::ModelConfig cfg;
    const auto base = model::init_model(cfg, 101);
    const model::LoraSpec spec;
    SplitMix64 rng(102);

    // (a) zero-init adapter
    const auto fresh = model::init_adapter(cfg, spec, 103);
    bool identical = true;
    for (int i = 0; i < 50; ++i) {
        std::vector<TokenId> ids(1 + rng.below(cfg.max_seq_len));
        for (auto& id : ids) {
            id = static_cast<TokenId>(rng.below(cfg.vocab_size));
        }
        const auto a = model::forward(base, nullptr, ids);
        const auto b = model::forward(base, &fresh, ids);
        identical = identical && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
    }
    o.require(identical, "(a) zero adapter changed logits");
    o.note("(a) 50 inputs bit-identical");

    // (b) 500 LoRA steps on a frozen base
    const auto samples = synthgen::generate({200, 104, 1.0});
    std::vector<std::string> texts;
    for (const auto& s : samples) {
        texts.push_back(model::prompt_text(s.text));
    }
    const auto vocab = tokenizer::train_bpe(texts, cfg.vocab_size);
    std::vector<train::LabeledPrompt> prompts;
    for (const auto& s : samples) {
        prompts.push_back({model::build_prompt(vocab, s.text), s.label});
    }
    const std::string hash_before = base.payload_hash();
    train::TrainConfig tc;
    tc.stage = train::Stage::lora;
    tc.adapter = spec;
    tc.epochs = 10;
    tc.batch_size = 8;
    tc.seed = 105;
    const auto res = train::finetune_lora(base, fresh, prompts, {}, tc);
    const std::string hash_after = base.payload_hash();
    o.require(res.steps == 500, "(b) ran " + std::to_string(res.steps) + " steps");
    o.require(hash_before == hash_after, "(b) base payload hash changed");
    o.note("(b) " + std::to_string(res.steps) + " steps, base hash unchanged " + hash_after.substr(0, 12));

    // (c) merged checkpoint vs adapter-applied forward
    const auto merged = model::merge_adapter(base, res.adapter);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        std::vector<TokenId> ids(1 + rng.below(cfg.max_seq_len));
        for (auto& id : ids) {
            id = static_cast<TokenId>(rng.below(cfg.vocab_size));
        }
        const auto a = model::forward(merged, nullptr, ids);
        const auto b = model::forward(base, &res.adapter, ids);
        for (std::size_t k = 0; k < a.size(); ++k) {
            worst = std::max(worst, static_cast<double>(std::abs(a[k] - b[k])));
        }
    }
    o.require(worst <= 1e-5, "(c) max abs diff " + fmt("%.3e", worst));
    o.note("(c) 100 inputs, max abs logit diff " + fmt("%.2e", worst));
    return o;
}

Outcome criterion6() {
    Outcome o;
    SplitMix64 rng(201);
    double worst = 0.0;
    std::size_t largest = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = trial == 0 ? 1000 : 2 + rng.below(999);
        largest = std::max(largest, n);
        std::vector<int> labels(n);
        std::vector<double> scores(n);
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = static_cast<int>(rng.below(2));
            scores[i] = static_cast<double>(rng.below(50)) / 50.0 + 0.1 * labels[i] * rng.uniform();
        }
        labels[0] = 1;
        labels[1] = 0;
        double wins = 0.0;
        double pairs = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (labels[i] == 1 && labels[j] == 0) {
                    pairs += 1.0;
                    wins += scores[i] > scores[j] ? 1.0 : (scores[i] == scores[j] ? 0.5 : 0.0);
                }
            }
        }
        const auto curve = eval::roc(labels, scores);
        worst = std::max({worst, std::abs(curve.auc - wins / pairs), std::abs(curve.auc_mann_whitney - wins / pairs)});
    }
    o.require(worst <= 1e-12, "pairwise disagreement " + fmt("%.3e", worst));
    const std::vector<int> labels = {1, 1, 1, 0, 0, 0};
    const std::vector<double> separated = {0.9, 0.8, 0.7, 0.3, 0.2, 0.1};
    const std::vector<double> constant(6, 0.42);
    const double sep_auc = eval::roc(labels, separated).auc;
    const double flat_auc = eval::roc(labels, constant).auc;
    o.require(eval::round_half_up(sep_auc) == 1.0, "separated auc " + fmt("%.6f", sep_auc));
    o.require(flat_auc == 0.5, "constant auc " + fmt("%.6f", flat_auc));
    o.note("50 datasets (n <= " + std::to_string(largest) + "), max |trapezoid - pairwise| " + fmt("%.1e", worst) +
           ", separated " + fmt("%.3f", sep_auc) + ", constant " + fmt("%.3f", flat_auc));
    return o;
}

Outcome criterion7() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    TempDir d("accept7");
    const std::string toy = data_dir() + "/../configs/toy.toml";
    bool ok = cli_run({"synth", "--out", d / "raw.jsonl", "--seed", "42", "--n-per-class", "250", "--cue-strength",
                       "1.0"}) == 0;
    ok = ok && cli_run({"preprocess", "--data", d / "raw.jsonl", "--out", d / "norm.jsonl"}) == 0;
    ok = ok && cli_run({"split", "--data", d / "norm.jsonl", "--out", d / "split", "--seed", "7"}) == 0;
    ok = ok && cli_run({"train-tokenizer", "--data", d / "split/train.jsonl", "--out", d / "vocab.json",
                        "--vocab-size", "512", "--as-prompts"}) == 0;
    ok = ok && cli_run({"pretrain", "--data", d / "split/train.jsonl", "--tokenizer", d / "vocab.json", "--config",
                        toy, "--as-prompts", "--out", d / "base.ckpt", "--trace", d / "pretrain.csv", "--seed",
                        "3"}) == 0;
    ok = ok && cli_run({"finetune-lora", "--model", d / "base.ckpt", "--data", d / "split/train.jsonl", "--valid",
                        d / "split/valid.jsonl", "--config", toy, "--out", d / "adapter.lora", "--trace",
                        d / "lora.csv", "--seed", "5"}) == 0;
    ok = ok && cli_run({"evaluate", "--model", d / "base.ckpt", "--adapter", d / "adapter.lora", "--data",
                        d / "split/test.jsonl", "--out", d / "report.json"}) == 0;
    o.require(ok, "pipeline command failed");
    if (!ok) {
        return o;
    }
    const auto sizes = std::array<std::size_t, 3>{corpus::load_dataset(d / "split/train.jsonl").size(),
                                                  corpus::load_dataset(d / "split/valid.jsonl").size(),
                                                  corpus::load_dataset(d / "split/test.jsonl").size()};
    o.require(sizes == std::array<std::size_t, 3>{400, 50, 50}, "split sizes");
    const auto report = nlohmann::json::parse(io::read_file(d / "report.json"));
    const double acc = report["accuracy"];
    const double recall = report["recall"];
    const double auc = report["roc_auc"];
    o.require(acc >= 0.95, "accuracy " + fmt("%.3f", acc));
    o.require(recall >= 0.95, "recall " + fmt("%.3f", recall));
    o.require(auc >= 0.98, "auc " + fmt("%.3f", auc));
    const auto pre = parse_trace(io::read_file(d / "pretrain.csv"));
    const auto lora = parse_trace(io::read_file(d / "lora.csv"));
    const auto [pre_head, pre_tail] = train::head_tail_mean_loss(pre, 100);
    const auto [lora_head, lora_tail] = train::head_tail_mean_loss(lora, 100);
    o.require(pre.size() == 300 && pre_tail < pre_head, "pretrain trailing loss did not fall");
    o.require(lora_tail < lora_head, "lora trailing loss did not fall");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.require(secs < 600.0, "runtime " + fmt("%.0f s", secs));
    o.note("split 400/50/50, test accuracy " + fmt("%.3f", acc) + ", recall " + fmt("%.3f", recall) + ", auc " +
           fmt("%.3f", auc) + ", pretrain loss " + fmt("%.2f", pre_head) + " -> " + fmt("%.2f", pre_tail) +
           ", lora loss " + fmt("%.3f", lora_head) + " -> " + fmt("%.3f", lora_tail) + ", " + fmt("%.1f s", secs));
    return o;
}

/// Runs every seeded command into `d`; returns false if any command failed.
bool seeded_pipeline(const TempDir& d, const std::string& cfg) {
    return cli_run({"synth", "--out", d / "raw.jsonl", "--seed", "11", "--n-per-class", "40", "--cue-strength",
                    "0.9"}) == 0 &&
           cli_run({"preprocess", "--data", d / "raw.jsonl", "--out", d / "norm.jsonl"}) == 0 &&
           cli_run({"split", "--data", d / "norm.jsonl", "--out", d / "split", "--seed", "12"}) == 0 &&
           cli_run({"train-tokenizer", "--data", d / "split/train.jsonl", "--out", d / "vocab.json", "--vocab-size",
                    "320", "--as-prompts"}) == 0 &&
           cli_run({"pretrain", "--data", d / "split/train.jsonl", "--tokenizer", d / "vocab.json", "--config", cfg,
                    "--as-prompts", "--out", d / "base.ckpt", "--trace", d / "pretrain.csv", "--seed", "13",
                    "--threads", "2"}) == 0 &&
           cli_run({"finetune-lora", "--model", d / "base.ckpt", "--data", d / "split/train.jsonl", "--valid",
                    d / "split/valid.jsonl", "--config", cfg, "--out", d / "adapter.lora", "--trace", d / "lora.csv",
                    "--seed", "14", "--threads", "2"}) == 0 &&
           cli_run({"merge", "--model", d / "base.ckpt", "--adapter", d / "adapter.lora", "--out",
                    d / "merged.ckpt"}) == 0 &&
           cli_run({"evaluate", "--model", d / "merged.ckpt", "--data", d / "split/test.jsonl", "--out",
                    d / "report.json", "--table", d / "report.txt"}) == 0 &&
           cli_run({"roc", "--model", d / "merged.ckpt", "--data", d / "split/test.jsonl", "--out", d / "roc.csv"}) ==
               0;
}

Outcome criterion8() {
    Outcome o;
    SplitMix64 rng(301);

    std::vector<std::string> train_texts;
    for (int i = 0; i < 300; ++i) {
        train_texts.push_back(phishlab::testing::random_normalized(rng));
    }
    const auto vocab = tokenizer::train_bpe(train_texts, 512);
    std::size_t round_trip_failures = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto x = phishlab::testing::random_normalized(rng);
        round_trip_failures += tokenizer::decode(vocab, tokenizer::encode(vocab, x, true)) == x ? 0 : 1;
    }
    o.require(round_trip_failures == 0, std::to_string(round_trip_failures) + " tokenizer round-trip failures");

    std::size_t idempotence_failures = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto once = corpus::normalize(phishlab::testing::random_unicode(rng));
        idempotence_failures += corpus::normalize(once) == once ? 0 : 1;
    }
    o.require(idempotence_failures == 0, std::to_string(idempotence_failures) + " normalize idempotence failures");

    std::size_t split_failures = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t pos = 3 + rng.below(80);
        const std::size_t neg = 3 + rng.below(80);
        std::vector<corpus::Sample> samples;
        for (std::size_t i = 0; i < pos + neg; ++i) {
            samples.push_back({std::to_string(i), "t", i < pos ? 1 : 0});
        }
        rng.shuffle(std::span<corpus::Sample>(samples));
        const auto split = corpus::stratified_split(samples, {0.8, 0.1, 0.1, rng.next()});
        std::vector<std::string> ids;
        for (const auto* part : {&split.train, &split.valid, &split.test}) {
            const auto m = static_cast<double>(part->size());
            const auto mp = static_cast<double>(
                std::count_if(part->begin(), part->end(), [](const corpus::Sample& s) { return s.label == 1; }));
            if (m > 0 && std::abs(mp / m - static_cast<double>(pos) / static_cast<double>(pos + neg)) > 1.0 / m) {
                ++split_failures;
            }
            for (const auto& s : *part) {
                ids.push_back(s.id);
            }
        }
        std::vector<std::string> want;
        for (const auto& s : samples) {
            want.push_back(s.id);
        }
        std::sort(ids.begin(), ids.end());
        std::sort(want.begin(), want.end());
        split_failures += ids == want ? 0 : 1;
    }
    o.require(split_failures == 0, std::to_string(split_failures) + " split partition/ratio failures");

    TempDir a("accept8a"), b("accept8b"), c("accept8c");
    io::write_file_atomic(c / "small.json",
                          R"({"model": {"vocab_size": 320, "d_model": 32, "n_layers": 1, "n_heads": 2, "d_ff": 64,)"
                          R"( "max_seq_len": 128, "tie_embeddings": true},)"
                          R"( "pretrain": {"steps": 40, "batch_size": 8, "seq_len": 32},)"
                          R"( "lora": {"epochs": 2, "batch_size": 8, "rank": 4, "alpha": 8}})");
    const bool ran = seeded_pipeline(a, c / "small.json") && seeded_pipeline(b, c / "small.json");
    o.require(ran, "seeded command failed");
    std::size_t compared = 0;
    std::size_t differing = 0;
    if (ran) {
        for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
            if (!entry.is_regular_file()) {
                continue;
            }
            const auto rel = std::filesystem::relative(entry.path(), a.path());
            ++compared;
            if (!std::filesystem::exists(b.path() / rel) || io::read_file(entry.path()) != io::read_file(b.path() / rel)) {
                ++differing;
                o.require(false, "rerun differs: " + rel.string());
            }
        }
    }
    o.note("1000 round trips, 1000 idempotence checks, 100 splits, " + std::to_string(compared) +
           " output files byte-identical on rerun (" + std::to_string(differing) + " differ)");
    return o;
}

} // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"metrics reproduce published comparison rows", criterion1},
        {"metrics reproduce published held-out row", criterion2},
        {"adapter trainable fraction within [0.003, 0.006]", criterion3},
        {"finite-difference gradient checks", criterion4},
        {"LoRA zero-init, frozen base, merge equivalence", criterion5},
        {"ROC AUC vs pairwise oracle", criterion6},
        {"end-to-end desk-scale run", criterion7},
        {"pipeline invariants and seeded determinism", criterion8},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failures += o.pass ? 0 : 1;
        std::printf("%s criterion %zu: %s [%.1f s] %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, secs,
                    o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu acceptance criteria passed\n", static_cast<int>(criteria.size()) - failures,
                criteria.size());
    return failures == 0 ? 0 : 1;
}
