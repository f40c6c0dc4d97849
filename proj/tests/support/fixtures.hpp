#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "negdist/corpus.hpp"
#include "negdist/decoding.hpp"
#include "negdist/losses.hpp"
#include "negdist/metrics.hpp"
#include "negdist/model.hpp"

namespace negdist::testing {

/// 2 encoder + 2 decoder layers, d_model 16, two heads.
model::ModelConfig tiny_config(std::size_t vocab = 12, double dropout = 0.1);

/// Owns token storage for a batch of examples.
struct Batch {
  std::vector<TokenSequence> queries;
  std::vector<TokenSequence> responses;
  std::vector<model::Example> examples() const;
};

/// Random non-reserved tokens; lengths drawn from [min_len, max_len].
Batch random_batch(std::mt19937_64& rng, std::size_t vocab, std::size_t count, std::size_t min_len,
                   std::size_t max_len);

/// Dataset of raw text pairs drawn from small query/response pools so that
/// responses repeat with several queries.
corpus::Dataset random_dialogue_dataset(std::mt19937_64& rng, std::size_t pairs);

/// Random corpus over a small alphabet; some sentences may be empty when
/// `allow_empty`.
metrics::Corpus random_corpus(std::mt19937_64& rng, std::size_t sentences, std::size_t alphabet,
                              std::size_t max_len, bool allow_empty);

/// Logits that depend only on the prefix, generated lazily from a seed.
class ToyModel {
 public:
  ToyModel(std::size_t vocab, std::uint64_t seed, double scale = 2.0) : vocab_(vocab), seed_(seed), scale_(scale) {}
  RowVector logits(std::span<const TokenId> prefix) const;
  decode::StepScorer scorer() const {
    return [this](std::span<const TokenId> p) { return logits(p); };
  }

 private:
  std::size_t vocab_;
  std::uint64_t seed_;
  double scale_;
  mutable std::map<std::vector<TokenId>, RowVector> cache_;
};

/// One scalar objective of the student parameters together with its
/// analytic gradient.
struct GradCase {
  std::string name;
  std::function<double(const model::Parameters&)> value;
  std::function<model::Parameters(const model::Parameters&)> gradient;
};

/// Every training loss composed with a tiny train-mode model on a fixed
/// batch; teacher-based losses use a second fixed model.
std::vector<GradCase> gradient_cases(std::uint64_t seed);

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double max_rel_error = 0.0;
  std::string worst;
};

/// Central finite differences on `count` uniformly drawn scalar parameters.
/// Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckReport check_gradient(const GradCase& c, const model::Parameters& params, std::size_t count,
                               std::uint64_t seed, double step = 1e-4, double tolerance = 1e-3,
                               double floor = 1e-8);

}  // namespace negdist::testing
