#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "negdist/corpus.hpp"

namespace negdist::metrics {

using Sentence = std::vector<std::string>;
using Corpus = std::vector<Sentence>;

/// Whitespace tokens of every text after normalization.
Corpus to_corpus(const std::vector<std::string>& texts);

/// Distinct n-grams over total n-gram occurrences, pooled over the corpus.
/// UndefinedMetric when the corpus has no n-gram of order n.
double dist_n(const Corpus& responses, std::size_t n);

/// Share of generated token occurrences whose training frequency is below
/// `threshold`. Unknown tokens count as frequent.
double lf_ratio(const Corpus& responses, const corpus::Vocab& vocab, std::uint64_t threshold = 100);

enum class KlDirection {
  ReferenceToGenerated,  // KL(P_ref || P_gen)
  GeneratedToReference,  // KL(P_gen || P_ref)
};

std::string_view to_string(KlDirection direction);
KlDirection parse_kl_direction(std::string_view text);

/// KL divergence between n-gram distributions in nats. Both distributions get
/// `epsilon` added on the union support and are renormalized.
double kl_n(const Corpus& generated, const Corpus& references, std::size_t n,
            KlDirection direction = KlDirection::ReferenceToGenerated, double epsilon = 1e-9);

/// Sentence BLEU-n: unsmoothed unigram precision, add-one precisions for
/// orders 2..n, brevity penalty exp(1 - r/c) when c <= r. Empty hypothesis
/// scores 0.
double sentence_bleu(const Sentence& hypothesis, const Sentence& reference, std::size_t n);

/// Mean sentence BLEU over aligned pairs.
double bleu_n(const Corpus& generated, const Corpus& references, std::size_t n);

inline constexpr std::string_view kBleuVariant =
    "sentence-mean; p1 unsmoothed; add-one on orders >= 2; bp = exp(1 - r/c) if c <= r";

struct MetricsConfig {
  std::uint64_t lf_threshold = 100;
  KlDirection kl_direction = KlDirection::ReferenceToGenerated;
  double kl_epsilon = 1e-9;
};

/// Absent values mark metrics that are undefined on the given corpora.
struct MetricsReport {
  std::optional<double> dist_1, dist_2, dist_3;
  std::optional<double> lf;
  std::optional<double> kl_1, kl_2;
  std::optional<double> bleu_3, bleu_4;

  std::size_t response_count = 0;
  std::size_t empty_responses = 0;
  std::size_t total_tokens = 0;
  std::size_t total_ngrams[3] = {0, 0, 0};  // orders 1..3 over generated text
  MetricsConfig config;
};

MetricsReport evaluate(const Corpus& generated, const Corpus& references, const corpus::Vocab& vocab,
                       const MetricsConfig& config = {});

std::string to_json(const MetricsReport& report, int indent = 2);
std::string to_table(const MetricsReport& report);

/// `query \t response` lines where the response may be empty (as emitted by
/// generation). Data error on malformed lines.
struct TextPair {
  std::string query;
  std::string response;
};
std::vector<TextPair> load_text_pairs(const std::filesystem::path& path, bool allow_empty_response);

}  // namespace negdist::metrics
