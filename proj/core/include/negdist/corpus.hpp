#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "negdist/types.hpp"

namespace negdist::corpus {

/// Lowercase and collapse every whitespace run into a single space, trimming
/// both ends. This is the identity used for tokens, responses and queries.
std::string normalize(std::string_view text);

/// Whitespace split of normalize(text).
std::vector<std::string> split_tokens(std::string_view text);

class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kReservedCount = 4;

  Vocab();

  std::size_t size() const noexcept { return tokens_.size(); }

  /// Id of `token`, or kUnk when absent.
  TokenId id(std::string_view token) const;
  std::optional<TokenId> find(std::string_view token) const;
  const std::string& token(TokenId id) const;

  /// Training-split occurrence count. Reserved ids report 0.
  std::uint64_t frequency(TokenId id) const;

  static bool is_reserved(TokenId id) noexcept {
    return id >= 0 && id < static_cast<TokenId>(kReservedCount);
  }

  /// Appends a non-reserved token. Throws Data on duplicates.
  TokenId add(const std::string& token, std::uint64_t frequency);

  /// One `token \t frequency` line per non-reserved id, in id order.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> frequencies_;
  std::unordered_map<std::string, TokenId> index_;
};

std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab);

/// Space-joined tokens; PAD/BOS/EOS are dropped, UNK is rendered as "<unk>".
std::string detokenize(std::span<const TokenId> ids, const Vocab& vocab);

struct DialoguePair {
  std::string raw_query;
  std::string raw_response;
  TokenSequence query;     // filled by encode()
  TokenSequence response;  // filled by encode()
};

enum class Split { Train, Valid, Test };

struct Dataset {
  Split split = Split::Train;
  std::vector<DialoguePair> pairs;
  /// Source entropy of each pair's response; empty until rank_and_split.
  std::vector<double> entropy;

  std::size_t size() const noexcept { return pairs.size(); }
  bool empty() const noexcept { return pairs.empty(); }
};

/// `query \t response` per line. Lines with a field count other than two are
/// rejected with their 1-based line numbers. Blank lines are skipped.
Dataset read_tsv(std::istream& in, Split split, std::string_view source_name = "<stream>");
Dataset load_tsv(const std::filesystem::path& path, Split split = Split::Train);
void write_tsv(std::ostream& out, const Dataset& dataset);
void save_tsv(const std::filesystem::path& path, const Dataset& dataset);

/// Tokenizes every pair in place.
void encode(Dataset& dataset, const Vocab& vocab);

/// Keeps the max_size most frequent tokens (reserved ids included in the
/// budget); ties go to the token seen first. Counts both sides of each pair.
Vocab build_vocab(const Dataset& training, std::size_t max_size);

struct EntropyEntry {
  std::string response;  // normalized
  double entropy = 0.0;  // nats
  std::vector<std::pair<std::string, std::size_t>> queries;  // distinct normalized queries, first-seen order
  std::size_t total = 0;
};

class EntropyTable {
 public:
  const std::vector<EntropyEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const EntropyEntry* find(std::string_view normalized_response) const;
  /// Entropy of a raw (un-normalized) response; Data error when absent.
  double entropy_of(std::string_view raw_response) const;

  /// `response \t entropy \t distinct_query_count`, in first-seen order.
  void write_tsv(std::ostream& out) const;
  void save_tsv(const std::filesystem::path& path) const;

 private:
  friend EntropyTable source_entropy(const Dataset& dataset);
  std::vector<EntropyEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// H(r) = -sum_i p(q_i|r) ln p(q_i|r) with p from relative pair frequencies.
EntropyTable source_entropy(const Dataset& dataset);

struct EntropySplit {
  Dataset negative;
  Dataset remaining;
};

/// Stable descending sort of pairs by response entropy; the first
/// ceil(ratio * N) pairs form the negative set. ratio must lie in (0, 1).
EntropySplit rank_and_split(const Dataset& dataset, const EntropyTable& table, double ratio);

struct TrainValidTest {
  Dataset train;
  Dataset valid;
  Dataset test;
};

/// Seeded random partition. Fractions are of the whole dataset.
TrainValidTest partition(const Dataset& dataset, double valid_fraction, double test_fraction,
                         std::uint64_t seed);

}  // namespace negdist::corpus
