// SPDX-License-Identifier: Apache-2.0
#include "addrtag/core.hpp"

#include "addrtag/preprocess.hpp"
#include "addrtag/text.hpp"

namespace addrtag {

TagVocabulary::TagVocabulary(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.size() < 2) throw InvalidVocabulary("tag vocabulary needs at least 2 tags");
  bool has_eos = false;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].empty()) throw InvalidVocabulary("empty tag name");
    if (!index_.emplace(names_[i], i).second) throw InvalidVocabulary("duplicate tag: " + names_[i]);
    if (names_[i] == kEosTag) {
      has_eos = true;
      eos_ = i;
    }
  }
  if (!has_eos) throw InvalidVocabulary("tag vocabulary must contain \"EOS\"");
}

TagVocabulary TagVocabulary::from_map(const std::map<std::string, long long>& entries) {
  std::vector<std::string> names(entries.size());
  std::vector<bool> seen(entries.size(), false);
  for (const auto& [name, index] : entries) {
    if (index < 0 || static_cast<std::size_t>(index) >= entries.size()) {
      throw InvalidVocabulary("tag index out of range for " + name + ": " + std::to_string(index));
    }
    if (seen[static_cast<std::size_t>(index)]) {
      throw InvalidVocabulary("duplicate tag index " + std::to_string(index));
    }
    seen[static_cast<std::size_t>(index)] = true;
    names[static_cast<std::size_t>(index)] = name;
  }
  return TagVocabulary(std::move(names));
}

const std::string& TagVocabulary::name_of(std::size_t index) const {
  if (index >= names_.size()) throw IndexOutOfRange("tag index " + std::to_string(index));
  return names_[index];
}

std::size_t TagVocabulary::index_of(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw UnknownTag(name);
  return it->second;
}

std::optional<std::size_t> TagVocabulary::find(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::map<std::string, long long> TagVocabulary::to_map() const {
  std::map<std::string, long long> out;
  for (std::size_t i = 0; i < names_.size(); ++i) out.emplace(names_[i], static_cast<long long>(i));
  return out;
}

TagVocabulary default_tag_vocabulary() {
  return TagVocabulary({"StreetNumber", "StreetName", "Unit", "Municipality", "Province", "PostalCode",
                        "Orientation", "GeneralDelivery", "EOS"});
}

void TokenizedAddress::check() const {
  if (tokens.empty()) throw EmptyAddress();
  for (const auto& token : tokens) {
    if (token.empty()) throw Error("empty token");
    for (const char c : token) {
      if (text::is_space(c)) throw Error("token contains whitespace: '" + token + "'");
    }
  }
  if (text::join(tokens, " ") != cleaned) throw Error("tokens do not rejoin to the cleaned text");
}

const DatasetRecord& validate_record(const DatasetRecord& record, const TagVocabulary& vocab,
                                     const Preprocessor& preprocessor) {
  const std::vector<std::string> tokens = text::split_whitespace(preprocessor.apply(record.address));
  if (tokens.size() != record.gold_tags.size()) {
    throw LengthMismatch(tokens.size(), record.gold_tags.size());
  }
  for (const auto& tag : record.gold_tags) {
    if (!vocab.contains(tag)) throw UnknownTag(tag);
  }
  return record;
}

}  // namespace addrtag
