// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace addrtag {

inline constexpr const char* kUnkSubword = "<unk>";

/// Learned byte-pair merges plus the subword vocabulary they induce.
/// Symbols are UTF-8 code-point strings, never bytes split mid-character.
class MergeTable {
 public:
  using Pair = std::pair<std::string, std::string>;

  MergeTable() = default;
  /// Validates the invariants (no duplicate pairs, dense indices, UNK present).
  MergeTable(std::vector<Pair> merges, std::map<std::string, int> vocab);

  const std::vector<Pair>& merges() const { return merges_; }
  const std::map<std::string, int>& vocab() const { return vocab_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  int unk_id() const { return unk_; }
  /// -1 when the symbol is not in the vocabulary.
  int id_of(const std::string& symbol) const;
  /// Rank of a pair in the merge list, or -1.
  int rank_of(const std::string& left, const std::string& right) const;

  /// `bpe-v1` text format: merges as `left\tright`, `---`, then `subword\tindex`.
  std::string serialize() const;
  static MergeTable deserialize(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static MergeTable load(const std::filesystem::path& path);

  bool operator==(const MergeTable& other) const {
    return merges_ == other.merges_ && vocab_ == other.vocab_;
  }

 private:
  std::vector<Pair> merges_;
  std::map<std::string, int> vocab_;
  std::map<Pair, int> ranks_;
  int unk_ = 0;
};

/// Every decimal digit becomes '0'.
std::string digits_to_zero(std::string_view token);

/// Greedy most-frequent-pair merging; ties go to the lexicographically
/// smallest (left, right). Stops early once no pair occurs at least twice.
MergeTable learn_bpe(const std::map<std::string, std::size_t>& corpus, std::size_t num_merges);

/// Symbol strings after applying merges; characters outside the vocabulary
/// are kept verbatim (they map to UNK in `segment`).
std::vector<std::string> segment_symbols(std::string_view token, const MergeTable& table);

std::vector<int> segment(std::string_view token, const MergeTable& table);

}  // namespace addrtag
