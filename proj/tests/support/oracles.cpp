#include "oracles.hpp"

#include <cmath>

namespace negdist::testing {
namespace {

using Gram = std::vector<std::string>;

std::vector<Gram> grams_of(const metrics::Sentence& s, std::size_t n) {
  std::vector<Gram> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) out.emplace_back(s.begin() + i, s.begin() + i + n);
  return out;
}

std::vector<Gram> all_grams(const metrics::Corpus& c, std::size_t n) {
  std::vector<Gram> out;
  for (const auto& s : c)
    for (auto& g : grams_of(s, n)) out.push_back(std::move(g));
  return out;
}

std::size_t count_of(const std::vector<Gram>& list, const Gram& g) {
  std::size_t c = 0;
  for (const auto& x : list) c += x == g;
  return c;
}

std::vector<Gram> distinct(const std::vector<Gram>& list) {
  std::vector<Gram> out;
  for (const auto& g : list) {
    bool seen = false;
    for (const auto& o : out) seen = seen || o == g;
    if (!seen) out.push_back(g);
  }
  return out;
}

}  // namespace

double brute_source_entropy(const corpus::Dataset& data, const std::string& normalized_response) {
  std::size_t total = 0;
  for (const auto& p : data.pairs) total += corpus::normalize(p.raw_response) == normalized_response;
  double h = 0.0;
  for (std::size_t i = 0; i < data.pairs.size(); ++i) {
    if (corpus::normalize(data.pairs[i].raw_response) != normalized_response) continue;
    const std::string q = corpus::normalize(data.pairs[i].raw_query);
    // Count each distinct query once, at its first occurrence.
    bool first = true;
    for (std::size_t j = 0; j < i && first; ++j)
      first = !(corpus::normalize(data.pairs[j].raw_response) == normalized_response &&
                corpus::normalize(data.pairs[j].raw_query) == q);
    if (!first) continue;
    std::size_t c = 0;
    for (const auto& p : data.pairs)
      c += corpus::normalize(p.raw_response) == normalized_response && corpus::normalize(p.raw_query) == q;
    const double prob = static_cast<double>(c) / static_cast<double>(total);
    h -= prob * std::log(prob);
  }
  return h;
}

double brute_dist(const metrics::Corpus& responses, std::size_t n) {
  const auto grams = all_grams(responses, n);
  return static_cast<double>(distinct(grams).size()) / static_cast<double>(grams.size());
}

double brute_lf(const metrics::Corpus& responses, const std::map<std::string, std::uint64_t>& frequency,
                std::uint64_t threshold) {
  double rare = 0, total = 0;
  for (const auto& s : responses) {
    for (const auto& t : s) {
      total += 1;
      const auto it = frequency.find(t);
      if (it != frequency.end() && it->second < threshold) rare += 1;
    }
  }
  return rare / total;
}

double brute_kl(const metrics::Corpus& generated, const metrics::Corpus& references, std::size_t n,
                bool reference_first, double epsilon) {
  const auto g = all_grams(generated, n);
  const auto r = all_grams(references, n);
  std::vector<Gram> both = r;
  both.insert(both.end(), g.begin(), g.end());
  const auto support = distinct(both);
  const double z = 1.0 + epsilon * static_cast<double>(support.size());
  double kl = 0.0;
  for (const auto& s : support) {
    const double pr = (static_cast<double>(count_of(r, s)) / static_cast<double>(r.size()) + epsilon) / z;
    const double pg = (static_cast<double>(count_of(g, s)) / static_cast<double>(g.size()) + epsilon) / z;
    kl += reference_first ? pr * std::log(pr / pg) : pg * std::log(pg / pr);
  }
  return kl;
}

double brute_bleu(const metrics::Corpus& generated, const metrics::Corpus& references, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const auto& h = generated[i];
    const auto& ref = references[i];
    if (h.empty()) continue;
    double product = 1.0;
    for (std::size_t k = 1; k <= n; ++k) {
      const auto hg = grams_of(h, k);
      const auto rg = grams_of(ref, k);
      double clipped = 0.0;
      for (const auto& u : distinct(hg)) clipped += static_cast<double>(std::min(count_of(hg, u), count_of(rg, u)));
      const double total = static_cast<double>(hg.size());
      product *= k == 1 ? clipped / total : (clipped + 1.0) / (total + 1.0);
    }
    const double c = static_cast<double>(h.size());
    const double r = static_cast<double>(ref.size());
    const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
    sum += bp * std::pow(product, 1.0 / static_cast<double>(n));
  }
  return sum / static_cast<double>(generated.size());
}

ExhaustiveResult exhaustive_search(const decode::StepScorer& scorer, std::size_t vocab, std::size_t max_length,
                                   TokenId eos, double exponent, std::size_t* visited) {
  ExhaustiveResult best;
  bool have = false;
  std::size_t count = 0;
  auto consider = [&](const std::vector<TokenId>& tokens, double lp, bool eos_end) {
    ++count;
    const double len = static_cast<double>(tokens.size() + (eos_end ? 1 : 0));
    const double score = exponent == 0.0 || len == 0.0 ? lp : lp / std::pow(len, exponent);
    if (!have || score > best.score) {
      best = {tokens, score, lp, eos_end};
      have = true;
    }
  };
  std::function<void(std::vector<TokenId>&, double)> walk = [&](std::vector<TokenId>& prefix, double lp) {
    if (prefix.size() == max_length) {
      consider(prefix, lp, false);
      return;
    }
    const RowVector logp = decode::log_softmax(scorer(prefix));
    for (std::size_t k = 0; k < vocab; ++k) {
      const double step = logp(static_cast<Eigen::Index>(k));
      if (std::isinf(step)) continue;
      if (static_cast<TokenId>(k) == eos) {
        consider(prefix, lp + step, true);
        continue;
      }
      prefix.push_back(static_cast<TokenId>(k));
      walk(prefix, lp + step);
      prefix.pop_back();
    }
  };
  std::vector<TokenId> prefix;
  walk(prefix, 0.0);
  if (visited) *visited = count;
  return best;
}

}  // namespace negdist::testing
