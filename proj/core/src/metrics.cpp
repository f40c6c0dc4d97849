#include "negdist/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "negdist/error.hpp"

namespace negdist::metrics {
namespace {

// n-gram key: tokens joined by a unit separator, which normalization never
// produces inside a token.
std::string ngram_key(const Sentence& s, std::size_t start, std::size_t n) {
  std::string key = s[start];
  for (std::size_t k = 1; k < n; ++k) {
    key.push_back('\x1f');
    key += s[start + k];
  }
  return key;
}

template <typename Map>
std::size_t count_ngrams(const Sentence& s, std::size_t n, Map& counts) {
  if (s.size() < n) return 0;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[ngram_key(s, i, n)];
  return s.size() - n + 1;
}

void check_order(std::size_t n) {
  if (n < 1) throw Error(ErrorKind::Domain, "n-gram order must be at least 1");
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

template <typename F>
std::optional<double> defined(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::UndefinedMetric) return std::nullopt;
    throw;
  }
}

}  // namespace

Corpus to_corpus(const std::vector<std::string>& texts) {
  Corpus out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(corpus::split_tokens(t));
  return out;
}

double dist_n(const Corpus& responses, std::size_t n) {
  check_order(n);
  std::unordered_map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& s : responses) total += count_ngrams(s, n, counts);
  if (total == 0) throw Error(ErrorKind::UndefinedMetric, "dist-" + std::to_string(n) + ": no n-grams");
  return static_cast<double>(counts.size()) / static_cast<double>(total);
}

double lf_ratio(const Corpus& responses, const corpus::Vocab& vocab, std::uint64_t threshold) {
  std::size_t total = 0, rare = 0;
  for (const auto& s : responses) {
    for (const auto& tok : s) {
      ++total;
      const auto id = vocab.find(tok);
      if (!id || *id == corpus::Vocab::kUnk) continue;
      if (vocab.frequency(*id) < threshold) ++rare;
    }
  }
  if (total == 0) throw Error(ErrorKind::UndefinedMetric, "lf: no generated tokens");
  return static_cast<double>(rare) / static_cast<double>(total);
}

std::string_view to_string(KlDirection direction) {
  return direction == KlDirection::ReferenceToGenerated ? "reference||generated" : "generated||reference";
}

KlDirection parse_kl_direction(std::string_view text) {
  if (text == "reference||generated" || text == "ref-gen") return KlDirection::ReferenceToGenerated;
  if (text == "generated||reference" || text == "gen-ref") return KlDirection::GeneratedToReference;
  throw Error(ErrorKind::Config, "unknown KL direction '" + std::string(text) + "'");
}

double kl_n(const Corpus& generated, const Corpus& references, std::size_t n, KlDirection direction,
            double epsilon) {
  check_order(n);
  if (!(epsilon > 0.0)) throw Error(ErrorKind::Config, "KL epsilon must be positive");
  if (generated.empty() || references.empty()) throw Error(ErrorKind::UndefinedMetric, "kl: empty corpus");
  std::map<std::string, std::size_t> gen, ref;
  std::size_t gen_total = 0, ref_total = 0;
  for (const auto& s : generated) gen_total += count_ngrams(s, n, gen);
  for (const auto& s : references) ref_total += count_ngrams(s, n, ref);
  if (gen_total == 0 || ref_total == 0)
    throw Error(ErrorKind::UndefinedMetric, "kl-" + std::to_string(n) + ": a corpus has no n-grams");

  std::map<std::string, std::pair<std::size_t, std::size_t>> joint;  // (ref, gen)
  for (const auto& [k, c] : ref) joint[k].first = c;
  for (const auto& [k, c] : gen) joint[k].second = c;
  const double norm = 1.0 + epsilon * static_cast<double>(joint.size());
  double kl = 0.0;
  for (const auto& [k, c] : joint) {
    const double pr = (static_cast<double>(c.first) / static_cast<double>(ref_total) + epsilon) / norm;
    const double pg = (static_cast<double>(c.second) / static_cast<double>(gen_total) + epsilon) / norm;
    const double p = direction == KlDirection::ReferenceToGenerated ? pr : pg;
    const double q = direction == KlDirection::ReferenceToGenerated ? pg : pr;
    kl += p * std::log(p / q);
  }
  return std::max(kl, 0.0);
}

double sentence_bleu(const Sentence& hypothesis, const Sentence& reference, std::size_t n) {
  check_order(n);
  if (hypothesis.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    std::unordered_map<std::string, std::size_t> h, r;
    const std::size_t total = count_ngrams(hypothesis, k, h);
    count_ngrams(reference, k, r);
    std::size_t matched = 0;
    for (const auto& [g, c] : h) {
      const auto it = r.find(g);
      if (it != r.end()) matched += std::min(c, it->second);
    }
    double p;
    if (k == 1) {
      if (matched == 0) return 0.0;
      p = static_cast<double>(matched) / static_cast<double>(total);
    } else {
      p = (static_cast<double>(matched) + 1.0) / (static_cast<double>(total) + 1.0);
    }
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(hypothesis.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / static_cast<double>(n));
}

double bleu_n(const Corpus& generated, const Corpus& references, std::size_t n) {
  if (generated.size() != references.size())
    throw Error(ErrorKind::Alignment, "bleu: " + std::to_string(generated.size()) + " hypotheses vs " +
                                          std::to_string(references.size()) + " references");
  if (generated.empty()) throw Error(ErrorKind::UndefinedMetric, "bleu: empty corpus");
  double sum = 0.0;
  for (std::size_t i = 0; i < generated.size(); ++i) sum += sentence_bleu(generated[i], references[i], n);
  return sum / static_cast<double>(generated.size());
}

MetricsReport evaluate(const Corpus& generated, const Corpus& references, const corpus::Vocab& vocab,
                       const MetricsConfig& config) {
  if (generated.size() != references.size())
    throw Error(ErrorKind::Alignment, "evaluate: " + std::to_string(generated.size()) + " hypotheses vs " +
                                          std::to_string(references.size()) + " references");
  MetricsReport r;
  r.config = config;
  r.response_count = generated.size();
  for (const auto& s : generated) {
    r.total_tokens += s.size();
    r.empty_responses += s.empty();
    for (std::size_t n = 1; n <= 3; ++n) r.total_ngrams[n - 1] += s.size() >= n ? s.size() - n + 1 : 0;
  }
  r.dist_1 = defined([&] { return dist_n(generated, 1); });
  r.dist_2 = defined([&] { return dist_n(generated, 2); });
  r.dist_3 = defined([&] { return dist_n(generated, 3); });
  r.lf = defined([&] { return lf_ratio(generated, vocab, config.lf_threshold); });
  r.kl_1 = defined([&] { return kl_n(generated, references, 1, config.kl_direction, config.kl_epsilon); });
  r.kl_2 = defined([&] { return kl_n(generated, references, 2, config.kl_direction, config.kl_epsilon); });
  r.bleu_3 = defined([&] { return bleu_n(generated, references, 3); });
  r.bleu_4 = defined([&] { return bleu_n(generated, references, 4); });
  return r;
}

std::string to_json(const MetricsReport& r, int indent) {
  nlohmann::ordered_json j;
  j["dist_1"] = optional_json(r.dist_1);
  j["dist_2"] = optional_json(r.dist_2);
  j["dist_3"] = optional_json(r.dist_3);
  j["lf"] = optional_json(r.lf);
  j["kl_1"] = optional_json(r.kl_1);
  j["kl_2"] = optional_json(r.kl_2);
  j["bleu_3"] = optional_json(r.bleu_3);
  j["bleu_4"] = optional_json(r.bleu_4);
  j["counts"] = {{"responses", r.response_count},
                 {"empty_responses", r.empty_responses},
                 {"tokens", r.total_tokens},
                 {"unigrams", r.total_ngrams[0]},
                 {"bigrams", r.total_ngrams[1]},
                 {"trigrams", r.total_ngrams[2]}};
  j["config"] = {{"kl_direction", std::string(to_string(r.config.kl_direction))},
                 {"kl_epsilon", r.config.kl_epsilon},
                 {"kl_log_base", "e"},
                 {"bleu_variant", std::string(kBleuVariant)},
                 {"lf_threshold", r.config.lf_threshold},
                 {"dist_scope", "corpus"}};
  return j.dump(indent);
}

std::string to_table(const MetricsReport& r) {
  std::ostringstream out;
  auto row = [&](const char* name, const std::optional<double>& v) {
    out << std::left << std::setw(8) << name << std::right << std::setw(12);
    if (v)
      out << std::fixed << std::setprecision(4) << *v;
    else
      out << "n/a";
    out << '\n';
  };
  row("Dist-1", r.dist_1);
  row("Dist-2", r.dist_2);
  row("Dist-3", r.dist_3);
  row("LF", r.lf);
  row("KL-1", r.kl_1);
  row("KL-2", r.kl_2);
  row("BLEU-3", r.bleu_3);
  row("BLEU-4", r.bleu_4);
  out << r.response_count << " responses, " << r.total_tokens << " tokens, KL " << to_string(r.config.kl_direction)
      << ", LF threshold " << r.config.lf_threshold << '\n';
  return out.str();
}

std::vector<TextPair> load_text_pairs(const std::filesystem::path& path, bool allow_empty_response) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<TextPair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (corpus::normalize(line).empty()) continue;
    const auto tab = line.find('\t');
    const bool bad = tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos;
    if (bad) throw Error(ErrorKind::Data, path.string() + ":" + std::to_string(line_no) + ": expected query<TAB>response");
    TextPair p{line.substr(0, tab), line.substr(tab + 1)};
    if (corpus::normalize(p.query).empty() || (!allow_empty_response && corpus::normalize(p.response).empty()))
      throw Error(ErrorKind::Data, path.string() + ":" + std::to_string(line_no) + ": empty field");
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace negdist::metrics
