#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phishlab/corpus.hpp"
#include "phishlab/error.hpp"
#include "phishlab/model/classify.hpp"

namespace phishlab::eval {

/// Binary counts with 1 = phishing = positive.
struct ConfusionMatrix {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const noexcept { return tp + fp + tn + fn; }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> verdicts) {
    if (labels.size() != verdicts.size()) {
        throw ValidationError("confusion: " + std::to_string(labels.size()) + " labels vs " +
                              std::to_string(verdicts.size()) + " verdicts");
    }
    if (labels.empty()) {
        throw ValidationError("confusion: no samples");
    }
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool actual = labels[i] != 0;
        const bool predicted = verdicts[i] != 0;
        if (actual && predicted) {
            ++cm.tp;
        } else if (!actual && predicted) {
            ++cm.fp;
        } else if (!actual) {
            ++cm.tn;
        } else {
            ++cm.fn;
        }
    }
    return cm;
}

struct Metrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Zero denominators yield 0 rather than NaN.
inline Metrics metrics(const ConfusionMatrix& cm) {
    if (cm.total() == 0) {
        throw ValidationError("metrics: empty confusion matrix");
    }
    auto ratio = [](std::uint64_t num, std::uint64_t den) {
        return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    Metrics m;
    m.accuracy = ratio(cm.tp + cm.tn, cm.total());
    m.precision = ratio(cm.tp, cm.tp + cm.fp);
    m.recall = ratio(cm.tp, cm.tp + cm.fn);
    // 2PR / (P + R) reduces to 2 tp / (2 tp + fp + fn), and is 0 when tp = 0.
    m.f1 = ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn);
    return m;
}

/// Half-up rounding to `digits` decimals for display. The 1e-9 nudge keeps
/// values such as 0.9755 (stored as 0.97549999...) rounding up.
inline double round_half_up(double x, int digits = 3) {
    const double scale = std::pow(10.0, digits);
    return std::floor(x * scale + 0.5 + 1e-9) / scale;
}

// ---------------------------------------------------------------------------
// ROC

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    double threshold = 0.0;  // +inf for the (0, 0) origin
};

struct RocCurve {
    std::vector<RocPoint> points;
    double auc = 0.0;               // trapezoidal area under the points
    double auc_mann_whitney = 0.0;  // rank-sum statistic, ties count 1/2
};

namespace detail {

inline void check_roc_inputs(std::span<const int> labels, std::span<const double> scores) {
    if (labels.size() != scores.size()) {
        throw ValidationError("roc: label and score counts differ");
    }
    std::size_t pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) {
            throw ValidationError("roc: labels must be 0 or 1");
        }
        if (std::isnan(scores[i])) {
            throw ValidationError("roc: NaN score");
        }
        pos += labels[i] == 1 ? 1 : 0;
    }
    if (pos == 0 || pos == labels.size()) {
        throw ValidationError("roc: both classes must be present");
    }
}

} // namespace detail

/// Mann-Whitney U / (P N) from average ranks, O(n log n).
inline double auc_mann_whitney(std::span<const int> labels, std::span<const double> scores) {
    detail::check_roc_inputs(labels, scores);
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Twice the rank sum of positives keeps tied average ranks integral.
    std::uint64_t twice_rank_sum = 0;
    std::uint64_t n_pos = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            ++j;
        }
        const std::uint64_t twice_avg_rank = (i + 1) + j;  // ranks i+1..j
        for (std::size_t k = i; k < j; ++k) {
            if (labels[idx[k]] == 1) {
                twice_rank_sum += twice_avg_rank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::uint64_t n_neg = labels.size() - n_pos;
    // 2U = 2R - P(P+1)
    const std::uint64_t twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Curve over unique score thresholds, descending; a sample is predicted
/// positive when score >= threshold. Starts at (0, 0) and ends at (1, 1).
inline RocCurve roc(std::span<const int> labels, std::span<const double> scores) {
    detail::check_roc_inputs(labels, scores);
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const auto n_pos = static_cast<std::uint64_t>(std::count(labels.begin(), labels.end(), 1));
    const std::uint64_t n_neg = labels.size() - n_pos;
    RocCurve curve;
    curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    // Trapezoids in integer units: 2 * area * P * N.
    std::uint64_t twice_area = 0;
    for (std::size_t i = 0; i < idx.size();) {
        const double thr = scores[idx[i]];
        const std::uint64_t tp_prev = tp;
        const std::uint64_t fp_prev = fp;
        while (i < idx.size() && scores[idx[i]] == thr) {
            (labels[idx[i]] == 1 ? tp : fp) += 1;
            ++i;
        }
        twice_area += (fp - fp_prev) * (tp + tp_prev);
        curve.points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                                static_cast<double>(tp) / static_cast<double>(n_pos), thr});
    }
    curve.auc = static_cast<double>(twice_area) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
    curve.auc_mann_whitney = auc_mann_whitney(labels, scores);
    return curve;
}

/// threshold,fpr,tpr rows; the origin's threshold prints as "inf".
inline std::string roc_csv(const RocCurve& curve) {
    std::string out = "threshold,fpr,tpr\n";
    char buf[128];
    for (const auto& p : curve.points) {
        if (std::isinf(p.threshold)) {
            std::snprintf(buf, sizeof buf, "inf,%.17g,%.17g\n", p.fpr, p.tpr);
        } else {
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.threshold, p.fpr, p.tpr);
        }
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports

struct EvalReport {
    std::string model;
    std::string dataset;
    double threshold = 0.5;
    ConfusionMatrix confusion;
    Metrics metrics;
    double roc_auc = 0.0;
    std::vector<double> scores;
};

/// Builds a report from per-sample phishing scores. ROC AUC needs both
/// classes; with a single class it is reported as NaN.
inline EvalReport report_from_scores(std::string model_name, std::string dataset_name, std::span<const int> labels,
                                     std::span<const double> scores, double threshold) {
    std::vector<int> verdicts;
    verdicts.reserve(scores.size());
    for (double p : scores) {
        verdicts.push_back(p >= threshold ? 1 : 0);
    }
    EvalReport r;
    r.model = std::move(model_name);
    r.dataset = std::move(dataset_name);
    r.threshold = threshold;
    r.confusion = confusion(labels, verdicts);
    r.metrics = metrics(r.confusion);
    const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
    r.roc_auc = both ? roc(labels, scores).auc : std::numeric_limits<double>::quiet_NaN();
    r.scores.assign(scores.begin(), scores.end());
    return r;
}

/// Scores every sample with score_fn(sample) -> p in [0, 1]. Errors are
/// rethrown with the sample id attached.
template <class ScoreFn>
EvalReport evaluate(std::span<const corpus::Sample> dataset, ScoreFn&& score_fn, double threshold,
                    std::string model_name, std::string dataset_name) {
    if (dataset.empty()) {
        throw ValidationError("evaluate: dataset is empty");
    }
    std::vector<int> labels;
    std::vector<double> scores;
    for (const auto& s : dataset) {
        labels.push_back(s.label);
        try {
            scores.push_back(score_fn(s));
        } catch (const ValidationError& e) {
            throw ValidationError("sample '" + s.id + "': " + e.what());
        }
    }
    return report_from_scores(std::move(model_name), std::move(dataset_name), labels, scores, threshold);
}

/// Classifies each (already normalized) sample through the prompt template.
inline EvalReport evaluate(const model::Checkpoint& ckpt, const model::LoraAdapter<float>* adapter,
                           const tokenizer::Vocabulary& vocab, std::span<const corpus::Sample> dataset,
                           double threshold, std::string model_name, std::string dataset_name) {
    return evaluate(
        dataset,
        [&](const corpus::Sample& s) { return model::classify(ckpt, adapter, model::build_prompt(vocab, s.text)); },
        threshold, std::move(model_name), std::move(dataset_name));
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["model"] = r.model;
    j["dataset"] = r.dataset;
    j["threshold"] = r.threshold;
    j["n"] = r.confusion.total();
    j["confusion"] = {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"tn", r.confusion.tn}, {"fn", r.confusion.fn}};
    j["accuracy"] = r.metrics.accuracy;
    j["f1"] = r.metrics.f1;
    j["precision"] = r.metrics.precision;
    j["recall"] = r.metrics.recall;
    if (std::isnan(r.roc_auc)) {
        j["roc_auc"] = nullptr;
    } else {
        j["roc_auc"] = r.roc_auc;
    }
    return j;
}

/// Aligned text table: Model, Accuracy, F1, Precision, Recall, ROC_AUC with
/// values rounded half-up to three decimals.
inline std::string format_table(std::span<const EvalReport> reports) {
    std::size_t width = 5;
    for (const auto& r : reports) {
        width = std::max(width, r.model.size());
    }
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-*s  %8s  %8s  %9s  %8s  %8s\n", static_cast<int>(width), "Model", "Accuracy",
                  "F1", "Precision", "Recall", "ROC_AUC");
    out += buf;
    for (const auto& r : reports) {
        char auc[32];
        if (std::isnan(r.roc_auc)) {
            std::snprintf(auc, sizeof auc, "%s", "n/a");
        } else {
            std::snprintf(auc, sizeof auc, "%.3f", round_half_up(r.roc_auc));
        }
        std::snprintf(buf, sizeof buf, "%-*s  %8.3f  %8.3f  %9.3f  %8.3f  %8s\n", static_cast<int>(width),
                      r.model.c_str(), round_half_up(r.metrics.accuracy), round_half_up(r.metrics.f1),
                      round_half_up(r.metrics.precision), round_half_up(r.metrics.recall), auc);
        out += buf;
    }
    return out;
}

} // namespace phishlab::eval
