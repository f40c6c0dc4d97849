#include "negdist/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "negdist/error.hpp"

namespace negdist::corpus {
namespace {

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

constexpr const char* kReservedTokens[] = {"<pad>", "<bos>", "<eos>", "<unk>"};

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for reading");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

std::string normalize(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  const std::string norm = normalize(text);
  std::size_t start = 0;
  while (start < norm.size()) {
    std::size_t end = norm.find(' ', start);
    if (end == std::string::npos) end = norm.size();
    tokens.emplace_back(norm.substr(start, end - start));
    start = end + 1;
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() {
  for (const char* tok : kReservedTokens) {
    index_.emplace(tok, static_cast<TokenId>(tokens_.size()));
    tokens_.emplace_back(tok);
    frequencies_.push_back(0);
  }
}

TokenId Vocab::id(std::string_view token) const { return find(token).value_or(kUnk); }

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw Error(ErrorKind::Domain, "token id " + std::to_string(id) + " outside vocab");
  return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocab::frequency(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= frequencies_.size())
    throw Error(ErrorKind::Domain, "token id " + std::to_string(id) + " outside vocab");
  return frequencies_[static_cast<std::size_t>(id)];
}

TokenId Vocab::add(const std::string& token, std::uint64_t frequency) {
  if (token.empty() || token.find_first_of(" \t\n\r") != std::string::npos)
    throw Error(ErrorKind::Data, "invalid vocab token '" + token + "'");
  const auto id = static_cast<TokenId>(tokens_.size());
  if (!index_.emplace(token, id).second)
    throw Error(ErrorKind::Data, "duplicate vocab token '" + token + "'");
  tokens_.push_back(token);
  frequencies_.push_back(frequency);
  return id;
}

void Vocab::save(const std::filesystem::path& path) const {
  auto out = open_out(path);
  for (std::size_t i = kReservedCount; i < tokens_.size(); ++i)
    out << tokens_[i] << '\t' << frequencies_[i] << '\n';
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

Vocab Vocab::load(const std::filesystem::path& path) {
  auto in = open_in(path);
  Vocab vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw Error(ErrorKind::Data, path.string() + ":" + std::to_string(line_no) +
                                       ": expected 'token<TAB>frequency'");
    std::uint64_t freq = 0;
    try {
      std::size_t used = 0;
      freq = std::stoull(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error(ErrorKind::Data,
                  path.string() + ":" + std::to_string(line_no) + ": bad frequency");
    }
    vocab.add(line.substr(0, tab), freq);
  }
  return vocab;
}

std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab) {
  auto tokens = split_tokens(text);
  if (tokens.empty()) throw Error(ErrorKind::EmptyInput, "text is empty after normalization");
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& tok : tokens) ids.push_back(vocab.id(tok));
  return ids;
}

std::string detokenize(std::span<const TokenId> ids, const Vocab& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (id == Vocab::kPad || id == Vocab::kBos || id == Vocab::kEos) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// TSV

Dataset read_tsv(std::istream& in, Split split, std::string_view source_name) {
  Dataset dataset;
  dataset.split = split;
  std::vector<std::size_t> bad_lines;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (normalize(line).empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      bad_lines.push_back(line_no);
      continue;
    }
    DialoguePair pair;
    pair.raw_query = line.substr(0, tab);
    pair.raw_response = line.substr(tab + 1);
    if (normalize(pair.raw_query).empty() || normalize(pair.raw_response).empty()) {
      bad_lines.push_back(line_no);
      continue;
    }
    dataset.pairs.push_back(std::move(pair));
  }
  if (!bad_lines.empty()) {
    std::ostringstream msg;
    msg << source_name << ": " << bad_lines.size()
        << " line(s) without exactly two non-empty tab-separated fields, at line(s)";
    for (std::size_t i = 0; i < bad_lines.size() && i < 20; ++i) msg << ' ' << bad_lines[i];
    if (bad_lines.size() > 20) msg << " ...";
    throw Error(ErrorKind::Data, msg.str());
  }
  return dataset;
}

Dataset load_tsv(const std::filesystem::path& path, Split split) {
  auto in = open_in(path);
  return read_tsv(in, split, path.string());
}

void write_tsv(std::ostream& out, const Dataset& dataset) {
  for (const auto& pair : dataset.pairs) out << pair.raw_query << '\t' << pair.raw_response << '\n';
}

void save_tsv(const std::filesystem::path& path, const Dataset& dataset) {
  auto out = open_out(path);
  write_tsv(out, dataset);
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

void encode(Dataset& dataset, const Vocab& vocab) {
  for (auto& pair : dataset.pairs) {
    pair.query = tokenize(pair.raw_query, vocab);
    pair.response = tokenize(pair.raw_response, vocab);
  }
}

Vocab build_vocab(const Dataset& training, std::size_t max_size) {
  if (max_size < Vocab::kReservedCount)
    throw Error(ErrorKind::Config, "vocab max_size " + std::to_string(max_size) +
                                       " is smaller than the reserved-token count");
  if (training.empty()) throw Error(ErrorKind::Data, "cannot build a vocab from an empty corpus");

  struct Count {
    std::uint64_t freq = 0;
    std::size_t first_seen = 0;
  };
  std::unordered_map<std::string, Count> counts;
  std::vector<std::string> order;
  auto visit = [&](const std::string& text) {
    for (auto& tok : split_tokens(text)) {
      auto [it, inserted] = counts.try_emplace(tok, Count{0, order.size()});
      if (inserted) order.push_back(tok);
      ++it->second.freq;
    }
  };
  for (const auto& pair : training.pairs) {
    visit(pair.raw_query);
    visit(pair.raw_response);
  }

  Vocab vocab;
  // Tokens that collide with reserved spellings would alias special ids.
  std::erase_if(order, [&](const std::string& tok) { return vocab.find(tok).has_value(); });
  std::stable_sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
    return counts.at(a).freq > counts.at(b).freq;
  });
  const std::size_t keep = std::min(order.size(), max_size - Vocab::kReservedCount);
  for (std::size_t i = 0; i < keep; ++i) vocab.add(order[i], counts.at(order[i]).freq);
  return vocab;
}

// ---------------------------------------------------------------------------
// Source entropy

const EntropyEntry* EntropyTable::find(std::string_view normalized_response) const {
  auto it = index_.find(std::string(normalized_response));
  return it == index_.end() ? nullptr : &entries_[it->second];
}

double EntropyTable::entropy_of(std::string_view raw_response) const {
  const auto* entry = find(normalize(raw_response));
  if (entry == nullptr)
    throw Error(ErrorKind::Data, "response not in entropy table: " + std::string(raw_response));
  return entry->entropy;
}

void EntropyTable::write_tsv(std::ostream& out) const {
  const auto old_precision = out.precision(17);
  for (const auto& e : entries_)
    out << e.response << '\t' << e.entropy << '\t' << e.queries.size() << '\n';
  out.precision(old_precision);
}

void EntropyTable::save_tsv(const std::filesystem::path& path) const {
  auto out = open_out(path);
  write_tsv(out);
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

EntropyTable source_entropy(const Dataset& dataset) {
  if (dataset.empty()) throw Error(ErrorKind::Data, "source entropy of an empty dataset");
  EntropyTable table;
  std::vector<std::unordered_map<std::string, std::size_t>> query_slots;
  for (const auto& pair : dataset.pairs) {
    std::string response = normalize(pair.raw_response);
    auto [it, inserted] = table.index_.try_emplace(response, table.entries_.size());
    if (inserted) {
      table.entries_.push_back(EntropyEntry{std::move(response), 0.0, {}, 0});
      query_slots.emplace_back();
    }
    auto& entry = table.entries_[it->second];
    auto& slots = query_slots[it->second];
    std::string query = normalize(pair.raw_query);
    auto [slot, fresh] = slots.try_emplace(query, entry.queries.size());
    if (fresh) entry.queries.emplace_back(std::move(query), 0);
    ++entry.queries[slot->second].second;
    ++entry.total;
  }
  for (auto& entry : table.entries_) {
    double h = 0.0;
    const auto total = static_cast<double>(entry.total);
    for (const auto& [query, count] : entry.queries) {
      const double p = static_cast<double>(count) / total;
      h -= p * std::log(p);
    }
    // A single outcome gives -1*log(1) = -0.0; report a clean zero.
    entry.entropy = h > 0.0 ? h : 0.0;
  }
  return table;
}

EntropySplit rank_and_split(const Dataset& dataset, const EntropyTable& table, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0))
    throw Error(ErrorKind::Config, "split ratio must lie in (0, 1), got " + std::to_string(ratio));
  const std::size_t n = dataset.size();
  std::vector<double> entropy(n);
  for (std::size_t i = 0; i < n; ++i) entropy[i] = table.entropy_of(dataset.pairs[i].raw_response);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return entropy[a] > entropy[b]; });

  // ratio * n carries representation error (0.3 * 10 > 3); absorb it before ceil.
  const auto top = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));

  EntropySplit out;
  out.negative.split = out.remaining.split = dataset.split;
  for (std::size_t rank = 0; rank < n; ++rank) {
    const std::size_t i = order[rank];
    Dataset& target = rank < top ? out.negative : out.remaining;
    target.pairs.push_back(dataset.pairs[i]);
    target.entropy.push_back(entropy[i]);
  }
  return out;
}

TrainValidTest partition(const Dataset& dataset, double valid_fraction, double test_fraction,
                         std::uint64_t seed) {
  if (valid_fraction < 0.0 || test_fraction < 0.0 || valid_fraction + test_fraction >= 1.0)
    throw Error(ErrorKind::Config, "valid/test fractions must be non-negative and sum below 1");
  const std::size_t n = dataset.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_valid = static_cast<std::size_t>(std::llround(valid_fraction * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));

  std::vector<Split> assignment(n, Split::Train);
  for (std::size_t k = 0; k < n_valid; ++k) assignment[order[k]] = Split::Valid;
  for (std::size_t k = n_valid; k < n_valid + n_test && k < n; ++k) assignment[order[k]] = Split::Test;

  TrainValidTest out;
  out.train.split = Split::Train;
  out.valid.split = Split::Valid;
  out.test.split = Split::Test;
  for (std::size_t i = 0; i < n; ++i) {
    switch (assignment[i]) {
      case Split::Train: out.train.pairs.push_back(dataset.pairs[i]); break;
      case Split::Valid: out.valid.pairs.push_back(dataset.pairs[i]); break;
      case Split::Test: out.test.pairs.push_back(dataset.pairs[i]); break;
    }
  }
  return out;
}

}  // namespace negdist::corpus
