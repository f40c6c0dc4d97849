#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "negdist/model.hpp"
#include "negdist/types.hpp"

namespace negdist::decode {

enum class Strategy { Greedy, Beam };

struct DecodeConfig {
  Strategy strategy = Strategy::Greedy;
  std::size_t beam_size = 5;
  /// Finished hypotheses score sum(log p) / length^exponent.
  double length_penalty = 1.0;
  /// Maximum number of response tokens, EOS excluded.
  std::size_t max_length = 32;

  void validate() const;
};

/// Logits for the token after `prefix` (response tokens so far, no BOS).
using StepScorer = std::function<RowVector(std::span<const TokenId> prefix)>;

struct Hypothesis {
  TokenSequence tokens;  // EOS excluded
  double log_prob = 0.0;
  bool ended_with_eos = false;
  double score = 0.0;

  /// Length used by the penalty: tokens plus the EOS when present.
  std::size_t scored_length() const noexcept { return tokens.size() + (ended_with_eos ? 1 : 0); }
};

double length_normalized(double log_prob, std::size_t length, double exponent);

/// Row log-softmax; -inf logits stay -inf.
RowVector log_softmax(const RowVector& logits);

/// Emits the arg-max token (lowest id on ties) until EOS or max_length.
Hypothesis greedy_search(const StepScorer& scorer, std::size_t max_length, TokenId eos);

/// Beam search with a finished pool. Expansions are ranked by
/// (log prob desc, parent rank, token id); EOS expansions met before the beam
/// is refilled move to the finished pool. Unfinished hypotheses that reach
/// max_length are finished as they stand. Earlier-found wins score ties.
Hypothesis beam_search(const StepScorer& scorer, std::size_t beam_size, double length_penalty,
                       std::size_t max_length, TokenId eos);

/// Eval-mode scorer over a trained model; PAD and BOS are never emitted.
StepScorer model_scorer(const model::EncodedQuery& encoded);

TokenSequence greedy_decode(const model::Parameters& params, std::span<const TokenId> query,
                            const DecodeConfig& config);
TokenSequence beam_decode(const model::Parameters& params, std::span<const TokenId> query,
                          const DecodeConfig& config);
/// Dispatches on config.strategy.
TokenSequence decode(const model::Parameters& params, std::span<const TokenId> query, const DecodeConfig& config);

std::vector<TokenSequence> decode_all(const model::Parameters& params, std::span<const TokenSequence> queries,
                                      const DecodeConfig& config);

}  // namespace negdist::decode
