#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "negdist/corpus.hpp"
#include "negdist/error.hpp"
#include "oracles.hpp"

namespace negdist {
namespace {

using corpus::Dataset;
using corpus::Vocab;

Dataset pairs_of(std::initializer_list<std::pair<const char*, const char*>> items) {
  Dataset d;
  for (const auto& [q, r] : items) d.pairs.push_back({q, r, {}, {}});
  return d;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::Numeric;
}

TEST(Normalize, CaseFoldsAndCollapsesWhitespace) {
  EXPECT_EQ(corpus::normalize("  Hello \t  THERE  "), "hello there");
  EXPECT_EQ(corpus::normalize(" \t "), "");
  EXPECT_EQ(corpus::split_tokens("  A  a "), (std::vector<std::string>{"a", "a"}));
}

TEST(Tokenize, LooksUpKnownTokensAndFallsBackToUnk) {
  Vocab v;
  const auto hello = v.add("hello", 3);
  const auto there = v.add("there", 1);
  const auto a = v.add("a", 1);
  EXPECT_EQ(corpus::tokenize("Hello there", v), (TokenSequence{hello, there}));
  EXPECT_EQ(corpus::tokenize("zzzunseen", v), (TokenSequence{Vocab::kUnk}));
  EXPECT_EQ(corpus::tokenize("  A  a ", v), (TokenSequence{a, a}));
  EXPECT_EQ(kind_of([&] { corpus::tokenize("   ", v); }), ErrorKind::EmptyInput);
}

TEST(Tokenize, DetokenizeDropsControlTokens) {
  Vocab v;
  const auto x = v.add("x", 1);
  EXPECT_EQ(corpus::detokenize(TokenSequence{Vocab::kBos, x, x, Vocab::kEos, Vocab::kPad}, v), "x x");
}

TEST(BuildVocab, CountsAndOrdersByFrequency) {
  const auto d = pairs_of({{"a a", "b"}});
  const auto v = corpus::build_vocab(d, 10);
  ASSERT_EQ(v.size(), Vocab::kReservedCount + 2);
  EXPECT_EQ(v.frequency(v.id("a")), 2u);
  EXPECT_EQ(v.frequency(v.id("b")), 1u);
  EXPECT_LT(v.id("a"), v.id("b"));
}

TEST(BuildVocab, CapKeepsMostFrequent) {
  const auto d = pairs_of({{"a a", "b"}});
  const auto v = corpus::build_vocab(d, Vocab::kReservedCount + 1);
  EXPECT_EQ(v.size(), Vocab::kReservedCount + 1);
  EXPECT_NE(v.id("a"), Vocab::kUnk);
  EXPECT_EQ(v.id("b"), Vocab::kUnk);
}

TEST(BuildVocab, TiesBreakByFirstOccurrence) {
  const auto v = corpus::build_vocab(pairs_of({{"z y", "x"}}), 10);
  EXPECT_LT(v.id("z"), v.id("y"));
  EXPECT_LT(v.id("y"), v.id("x"));
}

TEST(BuildVocab, Errors) {
  EXPECT_EQ(kind_of([] { corpus::build_vocab(pairs_of({{"a", "b"}}), 3); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([] { corpus::build_vocab(Dataset{}, 10); }), ErrorKind::Data);
}

TEST(Vocab, SaveLoadRoundTrip) {
  const auto v = corpus::build_vocab(pairs_of({{"a a c", "b"}, {"d", "a"}}), 100);
  const auto path = std::filesystem::temp_directory_path() / "negdist_vocab_test.tsv";
  v.save(path);
  const auto w = Vocab::load(path);
  ASSERT_EQ(w.size(), v.size());
  for (TokenId i = 0; i < static_cast<TokenId>(v.size()); ++i) {
    EXPECT_EQ(w.token(i), v.token(i));
    EXPECT_EQ(w.frequency(i), v.frequency(i));
  }
  std::filesystem::remove(path);
}

TEST(Tsv, RejectsMalformedLinesWithLineNumbers) {
  std::istringstream in("q1\tr1\nbad line\nq3\tr3\textra\n");
  try {
    corpus::read_tsv(in, corpus::Split::Train);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Data);
    const std::string msg = e.what();
    EXPECT_NE(msg.find('2'), std::string::npos);
    EXPECT_NE(msg.find('3'), std::string::npos);
  }
}

TEST(Tsv, RoundTrip) {
  const auto d = pairs_of({{"hi there", "hello"}, {"how are you", "fine"}});
  std::stringstream buf;
  corpus::write_tsv(buf, d);
  const auto back = corpus::read_tsv(buf, corpus::Split::Valid);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.split, corpus::Split::Valid);
  EXPECT_EQ(back.pairs[1].raw_query, "how are you");
  EXPECT_EQ(back.pairs[1].raw_response, "fine");
}

TEST(SourceEntropy, HandExamples) {
  const auto d = pairs_of({{"q1", "single"},
                           {"q1", "two"},
                           {"q2", "two"},
                           {"q1", "skew"},
                           {"q1", "skew"},
                           {"q1", "skew"},
                           {"q2", "skew"}});
  const auto table = corpus::source_entropy(d);
  EXPECT_EQ(table.entropy_of("single"), 0.0);
  EXPECT_NEAR(table.entropy_of("two"), std::log(2.0), 1e-15);
  EXPECT_NEAR(table.entropy_of("skew"), -(0.75 * std::log(0.75) + 0.25 * std::log(0.25)), 1e-15);
  EXPECT_NEAR(table.entropy_of("skew"), 0.5623, 1e-4);
}

TEST(SourceEntropy, ResponsesCompareAfterNormalization) {
  const auto d = pairs_of({{"q1", "I Don't  know"}, {"q2", "i don't know"}});
  const auto table = corpus::source_entropy(d);
  EXPECT_EQ(table.size(), 1u);
  EXPECT_NEAR(table.entropy_of("  I DON'T KNOW"), std::log(2.0), 1e-15);
}

TEST(SourceEntropy, MatchesBruteForceOnRandomDatasets) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const auto d = testing::random_dialogue_dataset(rng, 50 + 37 * trial);
    const auto table = corpus::source_entropy(d);
    for (const auto& e : table.entries()) {
      EXPECT_NEAR(e.entropy, testing::brute_source_entropy(d, e.response), 1e-12);
      EXPECT_GE(e.entropy, 0.0);
    }
  }
}

TEST(SourceEntropy, AddingANewQueryNeverDecreasesEntropy) {
  std::mt19937_64 rng(3);
  auto d = testing::random_dialogue_dataset(rng, 200);
  const auto before = corpus::source_entropy(d);
  const std::string target = before.entries().front().response;
  d.pairs.push_back({"a brand new query", target, {}, {}});
  const auto after = corpus::source_entropy(d);
  EXPECT_GE(after.entropy_of(target), before.entropy_of(target));
}

TEST(RankAndSplit, SelectsHighEntropyPairs) {
  // Entropies [0, ln2, ln2, 0] in pair order.
  const auto d = pairs_of({{"q0", "solo"}, {"q1", "shared"}, {"q2", "shared"}, {"q3", "other"}});
  const auto split = corpus::rank_and_split(d, corpus::source_entropy(d), 0.5);
  ASSERT_EQ(split.negative.size(), 2u);
  EXPECT_EQ(split.negative.pairs[0].raw_query, "q1");
  EXPECT_EQ(split.negative.pairs[1].raw_query, "q2");
  EXPECT_EQ(split.remaining.pairs[0].raw_query, "q0");
  EXPECT_EQ(split.remaining.pairs[1].raw_query, "q3");
}

TEST(RankAndSplit, TiesKeepOriginalOrder) {
  const auto d = pairs_of({{"a", "1"}, {"b", "2"}, {"c", "3"}, {"d", "4"}});
  const auto split = corpus::rank_and_split(d, corpus::source_entropy(d), 0.5);
  EXPECT_EQ(split.negative.pairs[0].raw_query, "a");
  EXPECT_EQ(split.negative.pairs[1].raw_query, "b");
}

TEST(RankAndSplit, CeilOfRatio) {
  const auto d = pairs_of({{"a", "1"}, {"b", "2"}, {"c", "3"}});
  EXPECT_EQ(corpus::rank_and_split(d, corpus::source_entropy(d), 0.5).negative.size(), 2u);
  Dataset ten;
  for (int i = 0; i < 10; ++i) ten.pairs.push_back({"q" + std::to_string(i), "r", {}, {}});
  // 0.3 * 10 is 3.0000000000000004 in binary; the split must still take 3.
  EXPECT_EQ(corpus::rank_and_split(ten, corpus::source_entropy(ten), 0.3).negative.size(), 3u);
}

TEST(RankAndSplit, RatioOutsideOpenIntervalIsConfigError) {
  const auto d = pairs_of({{"a", "1"}, {"b", "2"}});
  const auto t = corpus::source_entropy(d);
  EXPECT_EQ(kind_of([&] { corpus::rank_and_split(d, t, 1.0); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([&] { corpus::rank_and_split(d, t, 0.0); }), ErrorKind::Config);
}

TEST(Partition, DisjointAndComplete) {
  std::mt19937_64 rng(4);
  const auto d = testing::random_dialogue_dataset(rng, 101);
  const auto parts = corpus::partition(d, 0.1, 0.2, 7);
  EXPECT_EQ(parts.train.size() + parts.valid.size() + parts.test.size(), d.size());
  EXPECT_EQ(parts.valid.size(), 10u);
  EXPECT_EQ(parts.test.size(), 20u);
  const auto again = corpus::partition(d, 0.1, 0.2, 7);
  ASSERT_EQ(again.valid.size(), parts.valid.size());
  for (std::size_t i = 0; i < parts.valid.size(); ++i)
    EXPECT_EQ(again.valid.pairs[i].raw_query, parts.valid.pairs[i].raw_query);
}

TEST(Encode, FillsTokenIds) {
  auto d = pairs_of({{"a b", "c"}});
  const auto v = corpus::build_vocab(d, 100);
  corpus::encode(d, v);
  EXPECT_EQ(d.pairs[0].query, (TokenSequence{v.id("a"), v.id("b")}));
  EXPECT_EQ(d.pairs[0].response, (TokenSequence{v.id("c")}));
}

}  // namespace
}  // namespace negdist
