#include <gtest/gtest.h>

#include "support.hpp"

using namespace phishlab;
using tokenizer::TokenId;
namespace sp = tokenizer::special;

TEST(TrainBpe, SingleMergeOnRepeatedByte) {
    const std::vector<std::string> corpus = {"aaaa"};
    const auto v = tokenizer::train_bpe(corpus, 263);
    ASSERT_EQ(v.merges().size(), 1U);
    const TokenId a = v.byte_token('a');
    EXPECT_EQ(v.merges()[0], std::make_pair(a, a));
    EXPECT_EQ(v.tokens().back(), "aa");
    EXPECT_EQ(tokenizer::encode(v, "aaaa", true), (std::vector<TokenId>{sp::bos, 262, 262, sp::eos}));
}

TEST(TrainBpe, EmptyCorpusHasNoMerges) {
    const auto v = tokenizer::train_bpe({}, 512);
    EXPECT_EQ(v.size(), 262U);
    EXPECT_TRUE(v.merges().empty());
}

TEST(TrainBpe, BelowMinimumIsError) {
    EXPECT_THROW(tokenizer::train_bpe({}, 261), ValidationError);
}

TEST(TrainBpe, TiesBreakLexicographically) {
    // "ab" and "cd" both occur once; "ab" < "cd".
    const std::vector<std::string> corpus = {"cd", "ab"};
    const auto v = tokenizer::train_bpe(corpus, 263);
    ASSERT_EQ(v.merges().size(), 1U);
    EXPECT_EQ(v.tokens().back(), "ab");
}

TEST(TrainBpe, DeterministicVocabularyFile) {
    SplitMix64 rng(3);
    std::vector<std::string> corpus;
    for (int i = 0; i < 200; ++i) {
        corpus.push_back(phishlab::testing::random_normalized(rng));
    }
    const auto a = tokenizer::to_json(tokenizer::train_bpe(corpus, 400));
    const auto b = tokenizer::to_json(tokenizer::train_bpe(corpus, 400));
    EXPECT_EQ(a, b);
}

TEST(TrainBpe, MergesReferenceEarlierTokens) {
    const std::vector<std::string> corpus = {"the cat sat on the mat", "that hat", "the theme"};
    const auto v = tokenizer::train_bpe(corpus, 300);
    for (std::size_t i = 0; i < v.merges().size(); ++i) {
        EXPECT_LT(v.merges()[i].first, 262 + i);
        EXPECT_LT(v.merges()[i].second, 262 + i);
    }
}

TEST(Encode, EmptyWithFraming) {
    const auto v = tokenizer::train_bpe({}, 262);
    EXPECT_EQ(tokenizer::encode(v, "", true), (std::vector<TokenId>{sp::bos, sp::eos}));
    EXPECT_TRUE(tokenizer::encode(v, "", false).empty());
}

TEST(Decode, Examples) {
    const std::vector<std::string> corpus = {"phishing test", "phishing tests"};
    const auto v = tokenizer::train_bpe(corpus, 300);
    EXPECT_EQ(tokenizer::decode(v, std::vector<TokenId>{sp::bos, sp::eos}), "");
    EXPECT_EQ(tokenizer::decode(v, tokenizer::encode(v, "phishing test", true)), "phishing test");
    const std::vector<TokenId> bad = {9999};
    EXPECT_THROW(tokenizer::decode(v, bad), ValidationError);
}

TEST(Decode, InvalidUtf8IsReplaced) {
    const auto v = tokenizer::train_bpe({}, 262);
    const std::vector<TokenId> ids = {v.byte_token(0xFF), v.byte_token('a')};
    EXPECT_EQ(tokenizer::decode(v, ids), "\xEF\xBF\xBD" "a");
}

TEST(Encode, RoundTripAndNoSpecialsOnRandomText) {
    SplitMix64 rng(17);
    std::vector<std::string> train;
    for (int i = 0; i < 300; ++i) {
        train.push_back(phishlab::testing::random_normalized(rng));
    }
    const auto v = tokenizer::train_bpe(train, 512);
    for (int i = 0; i < 1000; ++i) {
        const auto x = phishlab::testing::random_normalized(rng);
        const auto ids = tokenizer::encode(v, x, false);
        for (auto id : ids) {
            ASSERT_GE(id, sp::count);
            ASSERT_LT(id, v.size());
        }
        ASSERT_EQ(tokenizer::decode(v, ids), x);
    }
}

TEST(VocabularyFile, RoundTripAndCorruption) {
    phishlab::testing::TempDir dir("tok");
    const std::vector<std::string> corpus = {"hello there", "hello world"};
    const auto v = tokenizer::train_bpe(corpus, 280);
    tokenizer::save_vocabulary(dir / "v.json", v);
    const auto w = tokenizer::load_vocabulary(dir / "v.json");
    EXPECT_EQ(w.tokens(), v.tokens());
    EXPECT_EQ(w.merges(), v.merges());
    EXPECT_EQ(tokenizer::to_json(w), io::read_file(dir / "v.json"));
    const auto j = nlohmann::json::parse(tokenizer::to_json(v));
    EXPECT_EQ(j["specials"]["VERDICT_TRUE"], 4);
    EXPECT_EQ(j["specials"]["VERDICT_FALSE"], 5);
    EXPECT_THROW(tokenizer::from_json("{\"version\":2}"), CorruptionError);
    EXPECT_THROW(tokenizer::from_json("not json"), CorruptionError);
}
