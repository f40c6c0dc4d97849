#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "negdist/error.hpp"
#include "negdist/metrics.hpp"
#include "oracles.hpp"

namespace negdist {
namespace {

using metrics::Corpus;
using metrics::KlDirection;

Corpus corpus_of(std::initializer_list<const char*> texts) {
  std::vector<std::string> v(texts.begin(), texts.end());
  return metrics::to_corpus(v);
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

corpus::Vocab vocab_with(const std::vector<std::pair<std::string, std::uint64_t>>& entries) {
  corpus::Vocab v;
  for (const auto& [t, f] : entries) v.add(t, f);
  return v;
}

TEST(DistN, HandExamples) {
  EXPECT_DOUBLE_EQ(metrics::dist_n(corpus_of({"a b a"}), 1), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(metrics::dist_n(corpus_of({"a b a"}), 2), 1.0);
  Corpus ten(10, metrics::Sentence{"a", "b"});
  EXPECT_DOUBLE_EQ(metrics::dist_n(ten, 1), 0.1);
}

TEST(DistN, ShortResponsesContributeNothing) {
  EXPECT_DOUBLE_EQ(metrics::dist_n(corpus_of({"a", "a b"}), 2), 1.0);
  EXPECT_EQ(kind_of([] { metrics::dist_n(corpus_of({"a", "b"}), 2); }), ErrorKind::UndefinedMetric);
  EXPECT_EQ(kind_of([] { metrics::dist_n(Corpus{}, 1); }), ErrorKind::UndefinedMetric);
}

TEST(DistN, PermutationInvariantAndScaleCovariant) {
  const auto c = corpus_of({"a b c", "d e", "f"});
  auto shuffled = c;
  std::reverse(shuffled.begin(), shuffled.end());
  for (std::size_t n = 1; n <= 2; ++n) {
    EXPECT_EQ(metrics::dist_n(c, n), metrics::dist_n(shuffled, n));
    Corpus tripled;
    for (int k = 0; k < 3; ++k) tripled.insert(tripled.end(), c.begin(), c.end());
    EXPECT_DOUBLE_EQ(metrics::dist_n(tripled, n), metrics::dist_n(c, n) / 3.0);
  }
}

TEST(LfRatio, HandExamples) {
  const auto v = vocab_with({{"common", 500}, {"rare", 3}});
  EXPECT_EQ(metrics::lf_ratio(corpus_of({"common common"}), v), 0.0);
  EXPECT_EQ(metrics::lf_ratio(corpus_of({"rare rare"}), v), 1.0);
  EXPECT_DOUBLE_EQ(metrics::lf_ratio(corpus_of({"rare rare common common common", "common rare common common common"}), v),
                   0.3);
  EXPECT_EQ(metrics::lf_ratio(corpus_of({"unseen <unk>"}), v), 0.0);
  EXPECT_EQ(kind_of([&] { metrics::lf_ratio(corpus_of({""}), v); }), ErrorKind::UndefinedMetric);
}

TEST(KlN, HandExamples) {
  const auto ref = corpus_of({"a a a b"});
  const auto gen = corpus_of({"a b"});
  EXPECT_NEAR(metrics::kl_n(gen, ref, 1), 0.75 * std::log(1.5) + 0.25 * std::log(0.5), 1e-8);
  EXPECT_NEAR(metrics::kl_n(ref, ref, 1), 0.0, 1e-9);
  const double disjoint = metrics::kl_n(corpus_of({"x y"}), ref, 1);
  EXPECT_TRUE(std::isfinite(disjoint));
  EXPECT_GT(disjoint, 10.0);
}

TEST(KlN, DirectionSwapsArguments) {
  const auto a = corpus_of({"a a a b"});
  const auto b = corpus_of({"a b c"});
  EXPECT_EQ(metrics::kl_n(a, b, 1, KlDirection::GeneratedToReference),
            metrics::kl_n(b, a, 1, KlDirection::ReferenceToGenerated));
  EXPECT_EQ(metrics::parse_kl_direction(metrics::to_string(KlDirection::GeneratedToReference)),
            KlDirection::GeneratedToReference);
}

TEST(KlN, EmptySideIsUndefined) {
  EXPECT_EQ(kind_of([] { metrics::kl_n(corpus_of({"a"}), corpus_of({"a b"}), 2); }), ErrorKind::UndefinedMetric);
}

TEST(Bleu, HandExamples) {
  const auto ref = metrics::Sentence{"a", "b", "c", "d"};
  EXPECT_NEAR(metrics::sentence_bleu({"a", "b", "c"}, ref, 3), std::exp(1.0 - 4.0 / 3.0), 1e-15);
  EXPECT_NEAR(metrics::sentence_bleu({"a", "b", "c"}, ref, 3), 0.7165, 1e-4);
  EXPECT_EQ(metrics::sentence_bleu(ref, ref, 4), 1.0);
  EXPECT_EQ(metrics::sentence_bleu({"x", "y"}, ref, 4), 0.0);
  EXPECT_EQ(metrics::sentence_bleu({}, ref, 4), 0.0);
}

TEST(Bleu, IdentityCorpusScoresOne) {
  std::mt19937_64 rng(5);
  const auto c = testing::random_corpus(rng, 40, 6, 8, false);
  EXPECT_NEAR(metrics::bleu_n(c, c, 4), 1.0, 1e-15);
  EXPECT_EQ(kind_of([&] { metrics::bleu_n(c, Corpus(3), 4); }), ErrorKind::Alignment);
}

TEST(Oracles, DistMatchesBruteForce) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = testing::random_corpus(rng, 1 + trial * 9, 3 + trial % 7, 6, true);
    for (std::size_t n = 1; n <= 3; ++n) {
      const double brute = testing::brute_dist(c, n);
      if (std::isnan(brute)) {
        EXPECT_THROW(metrics::dist_n(c, n), Error);
      } else {
        EXPECT_EQ(metrics::dist_n(c, n), brute);
      }
    }
  }
}

TEST(Oracles, LfMatchesBruteForce) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::uint64_t> freq(0, 250);
  for (int trial = 0; trial < 50; ++trial) {
    corpus::Vocab v;
    std::map<std::string, std::uint64_t> f;
    for (int t = 0; t < 8; ++t) {
      const auto k = freq(rng);
      v.add("t" + std::to_string(t), k);
      f["t" + std::to_string(t)] = k;
    }
    // Alphabet of 10 leaves t8 and t9 out of the vocabulary.
    const auto c = testing::random_corpus(rng, 1 + trial * 9, 10, 6, false);
    EXPECT_EQ(metrics::lf_ratio(c, v, 100), testing::brute_lf(c, f, 100));
  }
}

TEST(Oracles, KlMatchesBruteForce) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto gen = testing::random_corpus(rng, 1 + trial * 9, 4 + trial % 5, 6, false);
    const auto ref = testing::random_corpus(rng, 1 + trial * 7, 4 + trial % 3, 6, false);
    for (std::size_t n = 1; n <= 2; ++n) {
      const double brute_rg = testing::brute_kl(gen, ref, n, true, 1e-9);
      if (std::isnan(brute_rg)) continue;
      EXPECT_NEAR(metrics::kl_n(gen, ref, n, KlDirection::ReferenceToGenerated), brute_rg, 1e-9);
      EXPECT_NEAR(metrics::kl_n(gen, ref, n, KlDirection::GeneratedToReference),
                  testing::brute_kl(gen, ref, n, false, 1e-9), 1e-9);
    }
    EXPECT_LE(metrics::kl_n(ref, ref, 1), 1e-9);
  }
}

TEST(Oracles, BleuMatchesBruteForce) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t size = 1 + trial * 9;
    const auto gen = testing::random_corpus(rng, size, 3 + trial % 4, 7, true);
    const auto ref = testing::random_corpus(rng, size, 3 + trial % 4, 7, false);
    for (std::size_t n = 3; n <= 4; ++n) EXPECT_NEAR(metrics::bleu_n(gen, ref, n), testing::brute_bleu(gen, ref, n), 1e-9);
  }
}

TEST(Report, JsonCarriesConfigAndNullsForUndefinedMetrics) {
  const auto v = vocab_with({{"a", 500}, {"b", 2}});
  const auto gen = corpus_of({"a", "b"});
  const auto ref = corpus_of({"a b", "b a"});
  const auto r = metrics::evaluate(gen, ref, v);
  EXPECT_FALSE(r.dist_2.has_value());
  ASSERT_TRUE(r.dist_1.has_value());
  EXPECT_EQ(*r.dist_1, 1.0);
  const auto j = nlohmann::json::parse(metrics::to_json(r));
  EXPECT_TRUE(j["dist_2"].is_null());
  EXPECT_EQ(j["dist_1"].get<double>(), 1.0);
  EXPECT_EQ(j["config"]["kl_direction"].get<std::string>(), std::string(metrics::to_string(r.config.kl_direction)));
  EXPECT_EQ(j["config"]["bleu_variant"].get<std::string>(), std::string(metrics::kBleuVariant));
  EXPECT_EQ(j["config"]["lf_threshold"].get<std::uint64_t>(), 100u);
  EXPECT_EQ(r.response_count, 2u);
  EXPECT_NE(metrics::to_table(r).find("Dist-1"), std::string::npos);
}

TEST(Report, IdentityCorpus) {
  const auto v = vocab_with({{"a", 500}, {"b", 2}, {"c", 7}});
  const auto c = corpus_of({"a b c", "c b a a", "b b"});
  const auto r = metrics::evaluate(c, c, v);
  EXPECT_NEAR(*r.bleu_4, 1.0, 1e-15);
  EXPECT_LE(*r.kl_1, 1e-9);
}

TEST(TextPairs, AllowsEmptyResponsesWhenAsked) {
  const auto path = std::filesystem::temp_directory_path() / "negdist_pairs_test.tsv";
  {
    std::ofstream out(path);
    out << "q one\tr one\nq two\t\n";
  }
  const auto pairs = metrics::load_text_pairs(path, true);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[1].response, "");
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace negdist
