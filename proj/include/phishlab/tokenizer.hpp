#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <unicode/unistr.h>

#include "phishlab/error.hpp"
#include "phishlab/io.hpp"

namespace phishlab::tokenizer {

using TokenId = std::uint32_t;

namespace special {
inline constexpr TokenId pad = 0;
inline constexpr TokenId unk = 1;
inline constexpr TokenId bos = 2;
inline constexpr TokenId eos = 3;
inline constexpr TokenId verdict_true = 4;
inline constexpr TokenId verdict_false = 5;
inline constexpr TokenId count = 6;
} // namespace special

inline constexpr TokenId kFirstByteToken = special::count;
inline constexpr std::size_t kMinVocabSize = special::count + 256;
inline constexpr int kVocabFileVersion = 1;

/// Byte-level BPE vocabulary. Ids 0-5 are the special tokens, 6-261 the raw
/// bytes 0x00-0xFF, and id 262 + i is the result of merges[i].
class Vocabulary {
public:
    using Merge = std::pair<TokenId, TokenId>;

    Vocabulary() : Vocabulary(std::vector<Merge>{}) {}

    /// Rebuilds a vocabulary from its merge list. Every merge must reference
    /// ids that exist before it.
    explicit Vocabulary(std::vector<Merge> merges) : merges_(std::move(merges)) {
        tokens_.resize(special::count);
        for (int b = 0; b < 256; ++b) {
            tokens_.emplace_back(1, static_cast<char>(b));
        }
        for (std::size_t i = 0; i < merges_.size(); ++i) {
            const auto [a, b] = merges_[i];
            const auto next = static_cast<TokenId>(tokens_.size());
            if (a >= next || b >= next || a < kFirstByteToken || b < kFirstByteToken) {
                throw ValidationError("merge " + std::to_string(i) + " references an undefined token");
            }
            tokens_.push_back(tokens_[a] + tokens_[b]);
            if (!ranks_.emplace(merges_[i], static_cast<std::uint32_t>(i)).second) {
                throw ValidationError("merge " + std::to_string(i) + " duplicates an earlier merge");
            }
        }
    }

    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }
    const std::vector<Merge>& merges() const noexcept { return merges_; }
    const std::string& bytes(TokenId id) const { return tokens_.at(id); }

    static constexpr bool is_special(TokenId id) noexcept { return id < special::count; }
    static constexpr TokenId byte_token(std::uint8_t b) noexcept { return kFirstByteToken + b; }

    /// Merge rank of an adjacent pair, or -1.
    std::int64_t rank(TokenId a, TokenId b) const {
        auto it = ranks_.find({a, b});
        return it == ranks_.end() ? -1 : static_cast<std::int64_t>(it->second);
    }

    friend bool operator==(const Vocabulary& x, const Vocabulary& y) { return x.merges_ == y.merges_; }

private:
    std::vector<std::string> tokens_;
    std::vector<Merge> merges_;
    std::map<Merge, std::uint32_t> ranks_;
};

namespace detail {

/// Pre-tokenization: a chunk boundary sits before every space, so merges
/// never span words and " word" keeps its leading space.
inline std::vector<std::string_view> chunks(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 1; i < text.size(); ++i) {
        if (text[i] == ' ') {
            out.push_back(text.substr(start, i - start));
            start = i;
        }
    }
    if (start < text.size()) {
        out.push_back(text.substr(start));
    }
    return out;
}

inline std::vector<TokenId> byte_ids(std::string_view chunk) {
    std::vector<TokenId> ids;
    ids.reserve(chunk.size());
    for (char c : chunk) {
        ids.push_back(Vocabulary::byte_token(static_cast<std::uint8_t>(c)));
    }
    return ids;
}

/// Replaces every non-overlapping occurrence of (a, b), scanning left to right.
inline void apply_merge(std::vector<TokenId>& word, TokenId a, TokenId b, TokenId merged) {
    std::size_t w = 0;
    for (std::size_t r = 0; r < word.size(); ++r) {
        if (r + 1 < word.size() && word[r] == a && word[r + 1] == b) {
            word[w++] = merged;
            ++r;
        } else {
            word[w++] = word[r];
        }
    }
    word.resize(w);
}

} // namespace detail

/// Trains byte-level BPE: starting from the 256 byte tokens, repeatedly
/// merges the most frequent adjacent pair (counted over all chunk
/// occurrences) until vocab_size tokens exist or no pair remains. Ties go to
/// the pair whose (left bytes, right bytes) is lexicographically smallest.
inline Vocabulary train_bpe(std::span<const std::string> corpus, std::size_t vocab_size) {
    if (vocab_size < kMinVocabSize) {
        throw ValidationError("vocab_size must be at least " + std::to_string(kMinVocabSize));
    }
    std::map<std::string_view, std::uint64_t> chunk_counts;
    for (const auto& text : corpus) {
        for (auto c : detail::chunks(text)) {
            ++chunk_counts[c];
        }
    }
    std::vector<std::vector<TokenId>> words;
    std::vector<std::uint64_t> freq;
    words.reserve(chunk_counts.size());
    for (const auto& [chunk, n] : chunk_counts) {
        words.push_back(detail::byte_ids(chunk));
        freq.push_back(n);
    }

    std::vector<Vocabulary::Merge> merges;
    std::vector<std::string> tok_bytes(special::count);
    for (int b = 0; b < 256; ++b) {
        tok_bytes.emplace_back(1, static_cast<char>(b));
    }
    while (tok_bytes.size() < vocab_size) {
        std::map<Vocabulary::Merge, std::uint64_t> counts;
        for (std::size_t w = 0; w < words.size(); ++w) {
            const auto& word = words[w];
            for (std::size_t i = 0; i + 1 < word.size(); ++i) {
                counts[{word[i], word[i + 1]}] += freq[w];
            }
        }
        if (counts.empty()) {
            break;
        }
        const Vocabulary::Merge* best = nullptr;
        std::uint64_t best_count = 0;
        for (const auto& [pair, n] : counts) {
            if (best == nullptr || n > best_count) {
                best = &pair;
                best_count = n;
                continue;
            }
            if (n == best_count) {
                const auto lhs = std::tie(tok_bytes[pair.first], tok_bytes[pair.second]);
                const auto rhs = std::tie(tok_bytes[best->first], tok_bytes[best->second]);
                if (lhs < rhs) {
                    best = &pair;
                }
            }
        }
        const auto merged = static_cast<TokenId>(tok_bytes.size());
        const auto [a, b] = *best;
        merges.push_back(*best);
        tok_bytes.push_back(tok_bytes[a] + tok_bytes[b]);
        for (auto& word : words) {
            detail::apply_merge(word, a, b, merged);
        }
    }
    return Vocabulary(std::move(merges));
}

/// Encodes UTF-8 text by applying the learned merges in order within each
/// chunk. Never produces special ids other than the optional BOS/EOS frame.
inline std::vector<TokenId> encode(const Vocabulary& vocab, std::string_view text, bool add_bos_eos) {
    std::vector<TokenId> out;
    if (add_bos_eos) {
        out.push_back(special::bos);
    }
    for (auto chunk : detail::chunks(text)) {
        auto word = detail::byte_ids(chunk);
        while (word.size() > 1) {
            std::int64_t best = -1;
            std::size_t at = 0;
            for (std::size_t i = 0; i + 1 < word.size(); ++i) {
                const auto r = vocab.rank(word[i], word[i + 1]);
                if (r >= 0 && (best < 0 || r < best)) {
                    best = r;
                    at = i;
                }
            }
            if (best < 0) {
                break;
            }
            const auto a = word[at];
            const auto b = word[at + 1];
            detail::apply_merge(word, a, b, static_cast<TokenId>(kMinVocabSize + static_cast<std::size_t>(best)));
        }
        out.insert(out.end(), word.begin(), word.end());
    }
    if (add_bos_eos) {
        out.push_back(special::eos);
    }
    return out;
}

/// Concatenates the bytes of non-special tokens; ill-formed UTF-8 is replaced
/// with U+FFFD.
inline std::string decode(const Vocabulary& vocab, std::span<const TokenId> ids) {
    std::string raw;
    for (TokenId id : ids) {
        if (id >= vocab.size()) {
            throw ValidationError("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                                  std::to_string(vocab.size()));
        }
        if (!Vocabulary::is_special(id)) {
            raw += vocab.bytes(id);
        }
    }
    std::string out;
    icu::UnicodeString::fromUTF8(icu::StringPiece(raw.data(), static_cast<int32_t>(raw.size()))).toUTF8String(out);
    return out;
}

// ---------------------------------------------------------------------------
// Vocabulary file: JSON {version, specials, tokens (hex), merges (id pairs)}.

namespace detail {

inline std::string to_hex(std::string_view bytes) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned char c : bytes) {
        out.push_back(kHex[c >> 4]);
        out.push_back(kHex[c & 0xF]);
    }
    return out;
}

inline const nlohmann::ordered_json& special_map() {
    static const nlohmann::ordered_json m = {
        {"PAD", special::pad},
        {"UNK", special::unk},
        {"BOS", special::bos},
        {"EOS", special::eos},
        {"VERDICT_TRUE", special::verdict_true},
        {"VERDICT_FALSE", special::verdict_false},
    };
    return m;
}

} // namespace detail

inline std::string to_json(const Vocabulary& vocab) {
    nlohmann::ordered_json j;
    j["version"] = kVocabFileVersion;
    j["specials"] = detail::special_map();
    auto tokens = nlohmann::ordered_json::array();
    for (const auto& t : vocab.tokens()) {
        tokens.push_back(detail::to_hex(t));
    }
    j["tokens"] = std::move(tokens);
    auto merges = nlohmann::ordered_json::array();
    for (const auto& [a, b] : vocab.merges()) {
        merges.push_back({a, b});
    }
    j["merges"] = std::move(merges);
    return j.dump() + "\n";
}

inline Vocabulary from_json(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw CorruptionError(std::string("vocabulary is not valid JSON: ") + e.what());
    }
    try {
        if (j.at("version").get<int>() != kVocabFileVersion) {
            throw CorruptionError("unsupported vocabulary version " + j.at("version").dump());
        }
        for (const auto& [name, id] : detail::special_map().items()) {
            if (j.at("specials").at(name) != id) {
                throw CorruptionError("vocabulary special '" + name + "' has unexpected id");
            }
        }
        std::vector<Vocabulary::Merge> merges;
        for (const auto& m : j.at("merges")) {
            merges.emplace_back(m.at(0).get<TokenId>(), m.at(1).get<TokenId>());
        }
        Vocabulary vocab(std::move(merges));
        const auto& tokens = j.at("tokens");
        if (tokens.size() != vocab.size()) {
            throw CorruptionError("vocabulary token list length does not match merges");
        }
        for (std::size_t i = 0; i < vocab.size(); ++i) {
            if (tokens[i].get<std::string>() != detail::to_hex(vocab.tokens()[i])) {
                throw CorruptionError("vocabulary token " + std::to_string(i) + " disagrees with merge table");
            }
        }
        return vocab;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string("malformed vocabulary: ") + e.what());
    } catch (const ValidationError& e) {
        throw CorruptionError(std::string("malformed vocabulary: ") + e.what());
    }
}

inline void save_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab) {
    io::write_file_atomic(path, to_json(vocab));
}

inline Vocabulary load_vocabulary(const std::filesystem::path& path) { return from_json(io::read_file(path)); }

} // namespace phishlab::tokenizer
