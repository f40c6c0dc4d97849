#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "negdist/corpus.hpp"
#include "negdist/error.hpp"
#include "negdist/synth.hpp"

namespace negdist {
namespace {

synth::SynthConfig config(std::size_t queries, double ratio, std::uint64_t seed = 1) {
  synth::SynthConfig c;
  c.query_count = queries;
  c.generic_ratio = ratio;
  c.seed = seed;
  return c;
}

std::size_t template_pairs(const corpus::Dataset& d, const std::vector<std::string>& templates) {
  std::size_t n = 0;
  for (const auto& p : d.pairs)
    n += std::find(templates.begin(), templates.end(), corpus::normalize(p.raw_response)) != templates.end();
  return n;
}

TEST(Synth, ExactTemplateShare) {
  const auto c = config(1000, 0.5);
  const auto d = synth::generate(c);
  EXPECT_EQ(d.size(), 1000u);
  EXPECT_EQ(template_pairs(d, synth::templates(c)), 500u);
  EXPECT_EQ(synth::templates(c).size(), 3u);
}

TEST(Synth, QueriesAreDistinct) {
  const auto d = synth::generate(config(800, 0.3));
  std::set<std::string> seen;
  for (const auto& p : d.pairs) EXPECT_TRUE(seen.insert(corpus::normalize(p.raw_query)).second);
}

TEST(Synth, DeterministicPerSeed) {
  std::ostringstream a, b, c;
  corpus::write_tsv(a, synth::generate(config(300, 0.5, 4)));
  corpus::write_tsv(b, synth::generate(config(300, 0.5, 4)));
  corpus::write_tsv(c, synth::generate(config(300, 0.5, 5)));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str(), c.str());
}

TEST(Synth, TemplatesOutrankEveryOtherResponse) {
  const auto c = config(1000, 0.5, 2);
  const auto d = synth::generate(c);
  const auto templates = synth::templates(c);
  const auto table = corpus::source_entropy(d);
  double lowest_template = 1e300, highest_other = -1.0;
  for (const auto& e : table.entries()) {
    const bool is_template = std::find(templates.begin(), templates.end(), e.response) != templates.end();
    if (is_template)
      lowest_template = std::min(lowest_template, e.entropy);
    else
      highest_other = std::max(highest_other, e.entropy);
  }
  EXPECT_GT(lowest_template, highest_other);

  // So the top half of the ranking is exactly the template pairs.
  const auto split = corpus::rank_and_split(d, table, 0.5);
  EXPECT_EQ(template_pairs(split.negative, templates), split.negative.size());
  EXPECT_EQ(template_pairs(split.remaining, templates), 0u);
}

TEST(Synth, TemplateRate) {
  const std::vector<std::string> templates{"i don't know", "me too"};
  const std::vector<std::string> responses{"I don't  know", "something else", "me too", "me"};
  EXPECT_DOUBLE_EQ(synth::template_rate(responses, templates), 0.5);
}

TEST(Synth, InfeasibleConfigsAreRejected) {
  for (const double r : {0.0, 1.0, 1.5}) EXPECT_THROW(synth::generate(config(100, r)), Error);
  auto c = config(100, 0.5);
  c.template_count = 0;
  EXPECT_THROW(synth::generate(c), Error);
  c = config(1000000, 0.5);
  c.query_words = 2;
  c.max_query_length = 3;
  EXPECT_THROW(synth::generate(c), Error);
}

}  // namespace
}  // namespace negdist
