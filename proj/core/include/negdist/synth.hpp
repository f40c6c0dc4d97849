#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "negdist/corpus.hpp"

namespace negdist::synth {

/// Shape of a synthetic many-to-one dialogue corpus.
///
/// Every query is a distinct sequence of words drawn from `query_words`
/// symbols. A `generic_ratio` share of the pairs answer with one of
/// `template_count` fixed generic phrases; the rest answer with a
/// query-specific response that maps each query word to one of `synonyms`
/// response words, so the specific mapping is learnable but noisy.
struct SynthConfig {
  std::size_t template_count = 3;
  std::size_t query_count = 1000;
  double generic_ratio = 0.5;
  std::uint64_t seed = 1;
  std::size_t query_words = 40;
  std::size_t synonyms = 3;
  std::size_t min_query_length = 3;
  std::size_t max_query_length = 5;

  void validate() const;
};

/// The full pool of generic phrases templates are drawn from, in order.
std::span<const std::string_view> generic_phrase_pool();

/// The first `config.template_count` phrases of the pool.
std::vector<std::string> templates(const SynthConfig& config);

corpus::Dataset generate(const SynthConfig& config);

/// Share of `responses` whose normalized text equals one of the templates.
double template_rate(std::span<const std::string> responses, std::span<const std::string> templates);

}  // namespace negdist::synth
