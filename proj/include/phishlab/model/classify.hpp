#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "phishlab/model/transformer.hpp"
#include "phishlab/nn/kernels.hpp"
#include "phishlab/tokenizer.hpp"

namespace phishlab::model {

inline constexpr std::string_view kPromptPrefix = "classify as phishing? text: ";
inline constexpr std::string_view kPromptSuffix = " verdict:";

/// Prompt text for a normalized sample.
inline std::string prompt_text(std::string_view normalized_text) {
    std::string s(kPromptPrefix);
    s += normalized_text;
    s += kPromptSuffix;
    return s;
}

/// BOS followed by the encoded prompt; no EOS, so the last position is the
/// end of "verdict:" where the verdict logits are read.
inline std::vector<TokenId> build_prompt(const tokenizer::Vocabulary& vocab, std::string_view normalized_text) {
    std::vector<TokenId> ids{tokenizer::special::bos};
    const auto body = tokenizer::encode(vocab, prompt_text(normalized_text), false);
    ids.insert(ids.end(), body.begin(), body.end());
    return ids;
}

inline constexpr std::array<TokenId, 2> kVerdictIds = {tokenizer::special::verdict_true,
                                                       tokenizer::special::verdict_false};

/// Phishing probability from a pair of verdict logits (TRUE, FALSE).
template <class T>
double verdict_probability(T logit_true, T logit_false) {
    const Tensor<T> pair({2}, std::vector<T>{logit_true, logit_false});
    return static_cast<double>(nn::softmax(pair, 0)[0]);
}

struct Verdict {
    double p = 0.0;
    bool phishing = false;
};

/// p = softmax(logit[VERDICT_TRUE], logit[VERDICT_FALSE])[0] at the final
/// position. phishing = (p >= threshold).
inline double classify(const Checkpoint& ckpt, const LoraAdapter<float>* adapter, std::span<const TokenId> prompt) {
    const auto logits = forward(ckpt, adapter, prompt);
    const std::size_t last = logits.rows() - 1;
    return verdict_probability(logits.at(last, kVerdictIds[0]), logits.at(last, kVerdictIds[1]));
}

inline Verdict classify(const Checkpoint& ckpt, const LoraAdapter<float>* adapter, std::span<const TokenId> prompt,
                        double threshold) {
    const double p = classify(ckpt, adapter, prompt);
    return {p, p >= threshold};
}

} // namespace phishlab::model
