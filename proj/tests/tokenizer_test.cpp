#include <gtest/gtest.h>

#include <random>
#include <string>
#include <vector>

#include "prf/error.hpp"
#include "prf/tokenizer.hpp"
#include "test_support.hpp"

namespace {

using prf::CasePolicy;
using prf::Vocab;
namespace special = prf::special;

Vocab vocab_of(std::vector<std::string> texts, int min_count = 1) {
  return prf::build_vocab(texts, min_count);
}

TEST(BuildVocab, ContainsTokensAndSpecials) {
  const Vocab v = vocab_of({"a b a"});
  EXPECT_TRUE(v.contains("a"));
  EXPECT_TRUE(v.contains("b"));
  EXPECT_EQ(v.size(), special::kFirstRegularId + 2);
  for (auto s : Vocab::special_tokens()) EXPECT_TRUE(v.contains(s));
}

TEST(BuildVocab, MinCountDropsRareTokens) {
  const Vocab v = vocab_of({"a b a"}, 2);
  EXPECT_TRUE(v.contains("a"));
  EXPECT_FALSE(v.contains("b"));
  const auto t = prf::tokenize("b", v, CasePolicy::Preserve);
  ASSERT_EQ(t.ids.size(), 1u);
  EXPECT_EQ(t.ids[0], special::kUnk);
}

TEST(BuildVocab, KeepsBothCaseForms) {
  const Vocab v = vocab_of({"Hello hello"});
  EXPECT_TRUE(v.contains("Hello"));
  EXPECT_TRUE(v.contains("hello"));
  EXPECT_NE(v.id("Hello"), v.id("hello"));
}

TEST(BuildVocab, AdmitsFoldedFormOfCapitalisedToken) {
  const Vocab v = vocab_of({"World"});
  EXPECT_TRUE(v.contains("World"));
  EXPECT_TRUE(v.contains("world"));
}

TEST(BuildVocab, OrdersByFrequencyThenBytes) {
  const Vocab v = vocab_of({"c b b a a a d"});
  EXPECT_EQ(v.token(special::kFirstRegularId), "a");
  EXPECT_EQ(v.token(special::kFirstRegularId + 1), "b");
  EXPECT_EQ(v.token(special::kFirstRegularId + 2), "c");
  EXPECT_EQ(v.token(special::kFirstRegularId + 3), "d");
}

TEST(BuildVocab, Errors) {
  EXPECT_THROW(
      {
        try {
          vocab_of({});
        } catch (const prf::InputError& e) {
          EXPECT_STREQ(e.what(), "empty corpus");
          throw;
        }
      },
      prf::InputError);
  EXPECT_THROW(vocab_of({"a"}, 0), prf::InputError);
}

TEST(Vocab, SpecialIdsAreFixedAndDistinct) {
  const Vocab v = vocab_of({"x"});
  EXPECT_EQ(v.id("[CLS]"), special::kBos);
  EXPECT_EQ(v.id("[SEP]"), special::kSep);
  EXPECT_EQ(v.id("[MASK]"), special::kMask);
  EXPECT_EQ(v.id("[PAD]"), special::kPad);
  EXPECT_EQ(v.id("[UNK]"), special::kUnk);
  EXPECT_EQ(v.id("[Q]"), special::kQueryMarker);
  EXPECT_EQ(v.id("[D]"), special::kDocMarker);
}

TEST(Vocab, TokenAndIdAreInverse) {
  const Vocab v = vocab_of({"the quick brown fox, the lazy dog!"});
  for (prf::TokenId id = 0; id < v.size(); ++id) EXPECT_EQ(v.id(v.token(id)), id);
}

TEST(Vocab, SaveLoadRoundTrip) {
  prf::testing::TempDir dir;
  const Vocab v = vocab_of({"Alpha beta, gamma; Δέλτα"});
  v.save(dir / "vocab.txt");
  const Vocab w = Vocab::load(dir / "vocab.txt");
  ASSERT_EQ(v.size(), w.size());
  for (prf::TokenId id = 0; id < v.size(); ++id) EXPECT_EQ(v.token(id), w.token(id));
  const std::string text = prf::testing::read_file(dir / "vocab.txt");
  EXPECT_EQ(text.substr(0, 6), "[CLS]\n");
}

TEST(Vocab, LoadErrors) {
  prf::testing::TempDir dir;
  EXPECT_THROW(Vocab::load(dir / "missing.txt"), prf::InputError);
  prf::testing::write_file(dir / "bad.txt", "hello\nworld\n");
  EXPECT_THROW(Vocab::load(dir / "bad.txt"), prf::InputError);
}

TEST(Tokenize, LowercasePolicyEqualsPreserveOnLowercaseText) {
  const Vocab v = vocab_of({"Hello World hello world"});
  EXPECT_EQ(prf::tokenize("Hello World", v, CasePolicy::Lowercase).ids,
            prf::tokenize("hello world", v, CasePolicy::Preserve).ids);
}

TEST(Tokenize, PreserveDistinguishesCase) {
  const Vocab v = vocab_of({"Hello hello"});
  EXPECT_NE(prf::tokenize("Hello", v, CasePolicy::Preserve).ids,
            prf::tokenize("hello", v, CasePolicy::Preserve).ids);
}

TEST(Tokenize, EmptyInputGivesEmptySequence) {
  const Vocab v = vocab_of({"a"});
  EXPECT_TRUE(prf::tokenize("", v, CasePolicy::Preserve).empty());
  EXPECT_TRUE(prf::tokenize("", v, CasePolicy::Lowercase).empty());
  EXPECT_TRUE(prf::tokenize("  \t\n", v, CasePolicy::Lowercase).empty());
}

TEST(Tokenize, RecordsPolicyAndInsertsNoSpecials) {
  const Vocab v = vocab_of({"a b"});
  const auto t = prf::tokenize("a b zzz", v, CasePolicy::Lowercase);
  EXPECT_EQ(t.policy_used, CasePolicy::Lowercase);
  ASSERT_EQ(t.ids.size(), 3u);
  EXPECT_EQ(t.ids[2], special::kUnk);
  EXPECT_GE(t.ids[0], special::kFirstRegularId);
  EXPECT_GE(t.ids[1], special::kFirstRegularId);
}

TEST(SplitWords, PunctuationBecomesTokens) {
  EXPECT_EQ(prf::split_words("Hello, world! (x)"),
            (std::vector<std::string>{"Hello", ",", "world", "!", "(", "x", ")"}));
  EXPECT_EQ(prf::split_words("naïve café"), (std::vector<std::string>{"naïve", "café"}));
}

TEST(FoldCase, AsciiAndUnicodeBlocks) {
  EXPECT_EQ(prf::fold_case("HeLLo 123"), "hello 123");
  EXPECT_EQ(prf::fold_case("ÀÉÎÕÜ"), "àéîõü");
  EXPECT_EQ(prf::fold_case("ŁĄ"), "łą");
  EXPECT_EQ(prf::fold_case("ΑΒΓ"), "αβγ");
  EXPECT_EQ(prf::fold_case("ПРИВЕТ Ёж"), "привет ёж");
  EXPECT_EQ(prf::fold_case("\xff\xfe"), "\xff\xfe");
}

std::string random_text(std::mt19937_64& rng) {
  static const std::vector<std::string> words = {"Apple", "apple", "BANANA", "kiwi", "Kiwi",
                                                 ",",     ".",     "Über",   "über", "x"};
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  std::uniform_int_distribution<int> len(0, 12);
  std::string s;
  for (int i = len(rng); i > 0; --i) s += words[pick(rng)] + " ";
  return s;
}

TEST(TokenizeProperty, DetokenizeRoundTrip) {
  std::mt19937_64 rng(1);
  std::vector<std::string> corpus;
  for (int i = 0; i < 50; ++i) corpus.push_back(random_text(rng));
  const Vocab v = prf::build_vocab(corpus, 1);
  for (const auto& text : corpus) {
    const auto t = prf::tokenize(text, v, CasePolicy::Preserve);
    EXPECT_EQ(prf::tokenize(prf::detokenize(t, v), v, CasePolicy::Preserve).ids, t.ids);
  }
}

TEST(TokenizeProperty, LowercaseIsIdempotent) {
  std::mt19937_64 rng(2);
  std::vector<std::string> corpus;
  for (int i = 0; i < 50; ++i) corpus.push_back(random_text(rng));
  const Vocab v = prf::build_vocab(corpus, 1);
  for (const auto& text : corpus) {
    EXPECT_EQ(prf::tokenize(prf::fold_case(text), v, CasePolicy::Lowercase).ids,
              prf::tokenize(text, v, CasePolicy::Lowercase).ids);
  }
}

TEST(TokenizeProperty, EveryIdInVocab) {
  std::mt19937_64 rng(3);
  std::vector<std::string> corpus;
  for (int i = 0; i < 20; ++i) corpus.push_back(random_text(rng));
  const Vocab v = prf::build_vocab(corpus, 2);
  for (int i = 0; i < 50; ++i) {
    for (auto id : prf::tokenize(random_text(rng), v, CasePolicy::Preserve).ids) {
      EXPECT_LT(id, v.size());
    }
  }
}

TEST(CasePolicy, ParseAndPrint) {
  EXPECT_EQ(prf::parse_case_policy("preserve"), CasePolicy::Preserve);
  EXPECT_EQ(prf::parse_case_policy("lower"), CasePolicy::Lowercase);
  EXPECT_EQ(prf::to_string(CasePolicy::Lowercase), "lower");
  EXPECT_THROW(prf::parse_case_policy("upper"), prf::InputError);
}

}  // namespace
