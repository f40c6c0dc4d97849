#include "negdist/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "negdist/corpus.hpp"
#include "negdist/error.hpp"

namespace negdist::decode {

void DecodeConfig::validate() const {
  if (beam_size < 1) throw Error(ErrorKind::Config, "beam_size must be at least 1");
  if (!(length_penalty >= 0.0) || !std::isfinite(length_penalty))
    throw Error(ErrorKind::Config, "length_penalty must be a non-negative number");
  if (max_length < 1) throw Error(ErrorKind::Config, "max_length must be at least 1");
}

double length_normalized(double log_prob, std::size_t length, double exponent) {
  if (exponent == 0.0 || length == 0) return log_prob;
  return log_prob / std::pow(static_cast<double>(length), exponent);
}

RowVector log_softmax(const RowVector& logits) {
  const double max = logits.maxCoeff();
  RowVector out = logits.array() - max;
  const double lse = std::log(out.array().exp().sum());
  out.array() -= lse;
  return out;
}

Hypothesis greedy_search(const StepScorer& scorer, std::size_t max_length, TokenId eos) {
  Hypothesis h;
  while (h.tokens.size() < max_length) {
    const RowVector logp = log_softmax(scorer(h.tokens));
    Eigen::Index best = -1;
    for (Eigen::Index k = 0; k < logp.size(); ++k) {
      if (logp(k) == -std::numeric_limits<double>::infinity() || std::isnan(logp(k))) continue;
      if (best < 0 || logp(k) > logp(best)) best = k;
    }
    if (best < 0) break;
    h.log_prob += logp(best);
    if (static_cast<TokenId>(best) == eos) {
      h.ended_with_eos = true;
      break;
    }
    h.tokens.push_back(static_cast<TokenId>(best));
  }
  h.score = h.log_prob;
  return h;
}

Hypothesis beam_search(const StepScorer& scorer, std::size_t beam_size, double length_penalty,
                       std::size_t max_length, TokenId eos) {
  if (beam_size < 1) throw Error(ErrorKind::Config, "beam_size must be at least 1");
  struct Expansion {
    double log_prob;
    std::size_t parent;
    TokenId token;
  };
  std::vector<Hypothesis> active(1);
  std::vector<Hypothesis> finished;
  auto finish = [&](Hypothesis h, bool eos_end) {
    h.ended_with_eos = eos_end;
    h.score = length_normalized(h.log_prob, h.scored_length(), length_penalty);
    finished.push_back(std::move(h));
  };

  std::vector<Expansion> expansions;
  for (std::size_t step = 0; step < max_length && !active.empty(); ++step) {
    expansions.clear();
    for (std::size_t i = 0; i < active.size(); ++i) {
      const RowVector logp = log_softmax(scorer(active[i].tokens));
      for (Eigen::Index k = 0; k < logp.size(); ++k) {
        if (logp(k) == -std::numeric_limits<double>::infinity() || std::isnan(logp(k))) continue;
        expansions.push_back({active[i].log_prob + logp(k), i, static_cast<TokenId>(k)});
      }
    }
    std::sort(expansions.begin(), expansions.end(), [](const Expansion& a, const Expansion& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      if (a.parent != b.parent) return a.parent < b.parent;
      return a.token < b.token;
    });
    std::vector<Hypothesis> next;
    for (const auto& x : expansions) {
      if (next.size() == beam_size) break;
      Hypothesis h;
      h.tokens = active[x.parent].tokens;
      h.log_prob = x.log_prob;
      if (x.token == eos) {
        finish(std::move(h), true);
      } else {
        h.tokens.push_back(x.token);
        next.push_back(std::move(h));
      }
    }
    active = std::move(next);
  }
  for (auto& h : active) finish(std::move(h), false);

  if (finished.empty()) return {};
  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i)
    if (finished[i].score > finished[best].score) best = i;
  return finished[best];
}

StepScorer model_scorer(const model::EncodedQuery& encoded) {
  return [&encoded](std::span<const TokenId> prefix) {
    RowVector logits = encoded.next_logits(prefix);
    logits(corpus::Vocab::kPad) = -std::numeric_limits<double>::infinity();
    logits(corpus::Vocab::kBos) = -std::numeric_limits<double>::infinity();
    return logits;
  };
}

namespace {

std::size_t length_cap(const model::Parameters& params, const DecodeConfig& config) {
  // The decoder input holds BOS plus the generated tokens.
  const std::size_t room = params.config.max_sequence_length - 1;
  return std::min(config.max_length, room);
}

}  // namespace

TokenSequence greedy_decode(const model::Parameters& params, std::span<const TokenId> query,
                            const DecodeConfig& config) {
  config.validate();
  const model::EncodedQuery encoded(params, query);
  return greedy_search(model_scorer(encoded), length_cap(params, config), corpus::Vocab::kEos).tokens;
}

TokenSequence beam_decode(const model::Parameters& params, std::span<const TokenId> query,
                          const DecodeConfig& config) {
  config.validate();
  const model::EncodedQuery encoded(params, query);
  return beam_search(model_scorer(encoded), config.beam_size, config.length_penalty, length_cap(params, config),
                     corpus::Vocab::kEos)
      .tokens;
}

TokenSequence decode(const model::Parameters& params, std::span<const TokenId> query, const DecodeConfig& config) {
  return config.strategy == Strategy::Greedy ? greedy_decode(params, query, config)
                                             : beam_decode(params, query, config);
}

std::vector<TokenSequence> decode_all(const model::Parameters& params, std::span<const TokenSequence> queries,
                                      const DecodeConfig& config) {
  std::vector<TokenSequence> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(decode(params, q, config));
  return out;
}

}  // namespace negdist::decode
