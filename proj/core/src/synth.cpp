#include "negdist/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_set>

#include "negdist/error.hpp"

namespace negdist::synth {
namespace {

// Leading phrases share their first word, the way real generic replies do.
constexpr std::array<std::string_view, 10> kPhrases = {
    "i do n't know",
    "i am not sure",
    "i have no idea",
    "what do you mean",
    "i do n't think so",
    "that is a good question",
    "let me think about it",
    "i can not say",
    "maybe",
    "it is hard to say",
};

std::string query_word(std::size_t k) { return "q" + std::to_string(k); }

std::string response_word(std::size_t k, std::size_t variant) {
  return "r" + std::to_string(k) + static_cast<char>('a' + variant);
}

}  // namespace

void SynthConfig::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorKind::Config, "synth: " + why); };
  if (!(generic_ratio > 0.0 && generic_ratio < 1.0)) fail("generic ratio must lie in (0, 1)");
  if (template_count == 0) fail("template count must be positive");
  if (template_count > kPhrases.size())
    fail("at most " + std::to_string(kPhrases.size()) + " templates are available");
  if (query_words == 0 || synonyms == 0 || synonyms > 26) fail("word pools must be non-empty (synonyms <= 26)");
  if (min_query_length == 0 || min_query_length > max_query_length) fail("bad query length range");
  const auto generic = static_cast<std::size_t>(std::llround(generic_ratio * static_cast<double>(query_count)));
  if (generic < 2 * template_count)
    fail("each template needs at least two queries; raise the query count or generic ratio");
  if (generic >= query_count) fail("generic ratio leaves no query-specific pairs");
  // Distinct-query capacity, compared in floating point to dodge overflow.
  double capacity = 0.0;
  for (std::size_t len = min_query_length; len <= max_query_length; ++len)
    capacity += std::pow(static_cast<double>(query_words), static_cast<double>(len));
  if (capacity < 2.0 * static_cast<double>(query_count))
    fail("query space too small for " + std::to_string(query_count) + " distinct queries");
}

std::span<const std::string_view> generic_phrase_pool() { return kPhrases; }

std::vector<std::string> templates(const SynthConfig& config) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < config.template_count && i < kPhrases.size(); ++i)
    out.emplace_back(kPhrases[i]);
  return out;
}

corpus::Dataset generate(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick_word(0, config.query_words - 1);
  std::uniform_int_distribution<std::size_t> pick_len(config.min_query_length, config.max_query_length);
  std::uniform_int_distribution<std::size_t> pick_synonym(0, config.synonyms - 1);

  std::vector<std::vector<std::size_t>> queries;
  std::unordered_set<std::string> seen;
  while (queries.size() < config.query_count) {
    std::vector<std::size_t> words(pick_len(rng));
    std::string key;
    for (auto& w : words) {
      w = pick_word(rng);
      key += query_word(w) + ' ';
    }
    if (seen.insert(key).second) queries.push_back(std::move(words));
  }

  const auto generic =
      static_cast<std::size_t>(std::llround(config.generic_ratio * static_cast<double>(config.query_count)));
  std::vector<std::size_t> order(config.query_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::ptrdiff_t> template_of(config.query_count, -1);
  for (std::size_t k = 0; k < generic; ++k)
    template_of[order[k]] = static_cast<std::ptrdiff_t>(k % config.template_count);

  const auto phrases = templates(config);
  corpus::Dataset dataset;
  dataset.pairs.reserve(config.query_count);
  for (std::size_t i = 0; i < config.query_count; ++i) {
    corpus::DialoguePair pair;
    std::string response;
    for (std::size_t w : queries[i]) {
      if (!pair.raw_query.empty()) pair.raw_query += ' ';
      pair.raw_query += query_word(w);
      // Drawn for every pair so template choice never shifts the RNG stream.
      const std::size_t variant = pick_synonym(rng);
      if (!response.empty()) response += ' ';
      response += response_word(w, variant);
    }
    pair.raw_response = template_of[i] >= 0 ? phrases[static_cast<std::size_t>(template_of[i])] : response;
    dataset.pairs.push_back(std::move(pair));
  }
  return dataset;
}

double template_rate(std::span<const std::string> responses, std::span<const std::string> templates) {
  if (responses.empty()) return 0.0;
  std::unordered_set<std::string> pool;
  for (const auto& t : templates) pool.insert(corpus::normalize(t));
  std::size_t hits = 0;
  for (const auto& r : responses) hits += pool.count(corpus::normalize(r));
  return static_cast<double>(hits) / static_cast<double>(responses.size());
}

}  // namespace negdist::synth
