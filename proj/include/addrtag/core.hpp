// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "addrtag/error.hpp"

namespace addrtag {

class Preprocessor;

inline constexpr const char* kEosTag = "EOS";

/// Dense bijection tag-name <-> index. Always contains "EOS" and at least
/// one other tag.
class TagVocabulary {
 public:
  /// Names listed in index order.
  explicit TagVocabulary(std::vector<std::string> names);

  /// Accepts the {"name": index} mapping users write by hand; indices must be
  /// exactly 0..K-1.
  static TagVocabulary from_map(const std::map<std::string, long long>& entries);

  std::size_t size() const { return names_.size(); }
  const std::string& name_of(std::size_t index) const;
  std::size_t index_of(const std::string& name) const;
  std::optional<std::size_t> find(const std::string& name) const;
  bool contains(const std::string& name) const { return find(name).has_value(); }
  std::size_t eos_index() const { return eos_; }
  const std::vector<std::string>& names() const { return names_; }
  std::map<std::string, long long> to_map() const;

  bool operator==(const TagVocabulary& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t eos_ = 0;
};

/// StreetNumber, StreetName, Unit, Municipality, Province, PostalCode,
/// Orientation, GeneralDelivery, EOS (indices 0..8).
TagVocabulary default_tag_vocabulary();

struct TokenizedAddress {
  std::string raw;
  std::string cleaned;
  std::vector<std::string> tokens;

  /// Enforces the token invariants: non-empty, no whitespace inside a token,
  /// tokens joined by single spaces equal `cleaned`.
  void check() const;
};

struct ParsedAddress {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;
  std::vector<double> probabilities;

  bool operator==(const ParsedAddress&) const = default;
};

struct DatasetRecord {
  std::string address;
  std::vector<std::string> gold_tags;

  bool operator==(const DatasetRecord&) const = default;
};

/// Returns the record unchanged if its preprocessed token count matches the
/// tag count and every tag is in `vocab`; throws LengthMismatch / UnknownTag.
const DatasetRecord& validate_record(const DatasetRecord& record, const TagVocabulary& vocab,
                                     const Preprocessor& preprocessor);

}  // namespace addrtag
