// SPDX-License-Identifier: Apache-2.0
#include "addrtag/bpe.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "addrtag/error.hpp"
#include "addrtag/text.hpp"

namespace addrtag {
namespace {

constexpr std::string_view kHeader = "bpe-v1";

// Replaces every non-overlapping (left, right) occurrence, scanning left to right.
void apply_merge(std::vector<std::string>& symbols, const std::string& left, const std::string& right) {
  if (symbols.size() < 2) return;
  std::vector<std::string> out;
  out.reserve(symbols.size());
  std::size_t i = 0;
  while (i < symbols.size()) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      out.push_back(left + right);
      i += 2;
    } else {
      out.push_back(std::move(symbols[i]));
      ++i;
    }
  }
  symbols = std::move(out);
}

}  // namespace

MergeTable::MergeTable(std::vector<Pair> merges, std::map<std::string, int> vocab)
    : merges_(std::move(merges)), vocab_(std::move(vocab)) {
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    if (!ranks_.emplace(merges_[i], static_cast<int>(i)).second) {
      throw InvalidConfig("duplicate merge: " + merges_[i].first + " " + merges_[i].second);
    }
  }
  std::vector<bool> seen(vocab_.size(), false);
  for (const auto& [symbol, index] : vocab_) {
    if (index < 0 || static_cast<std::size_t>(index) >= vocab_.size() || seen[static_cast<std::size_t>(index)]) {
      throw InvalidConfig("subword indices must be dense and unique");
    }
    seen[static_cast<std::size_t>(index)] = true;
  }
  const auto unk = vocab_.find(kUnkSubword);
  if (unk == vocab_.end()) throw InvalidConfig("subword vocabulary lacks <unk>");
  unk_ = unk->second;
}

int MergeTable::id_of(const std::string& symbol) const {
  const auto it = vocab_.find(symbol);
  return it == vocab_.end() ? -1 : it->second;
}

int MergeTable::rank_of(const std::string& left, const std::string& right) const {
  const auto it = ranks_.find(Pair{left, right});
  return it == ranks_.end() ? -1 : it->second;
}

std::string MergeTable::serialize() const {
  std::string out(kHeader);
  out += '\n';
  for (const auto& [left, right] : merges_) out += left + '\t' + right + '\n';
  out += "---\n";
  std::vector<const std::string*> by_index(vocab_.size());
  for (const auto& [symbol, index] : vocab_) by_index[static_cast<std::size_t>(index)] = &symbol;
  for (std::size_t i = 0; i < by_index.size(); ++i) out += *by_index[i] + '\t' + std::to_string(i) + '\n';
  return out;
}

MergeTable MergeTable::deserialize(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line != kHeader) throw ParseError(1, "expected bpe-v1 header");
  std::vector<Pair> merges;
  std::map<std::string, int> vocab;
  bool in_vocab = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!in_vocab && line == "---") {
      in_vocab = true;
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      throw ParseError(line_no, "expected two tab-separated fields");
    }
    std::string first = line.substr(0, tab);
    std::string second = line.substr(tab + 1);
    if (!in_vocab) {
      merges.emplace_back(std::move(first), std::move(second));
    } else {
      try {
        std::size_t used = 0;
        const int index = std::stoi(second, &used);
        if (used != second.size()) throw std::invalid_argument(second);
        if (!vocab.emplace(std::move(first), index).second) throw ParseError(line_no, "duplicate subword");
      } catch (const std::logic_error&) {
        throw ParseError(line_no, "bad subword index");
      }
    }
  }
  if (!in_vocab) throw ParseError(line_no, "missing --- separator");
  return MergeTable(std::move(merges), std::move(vocab));
}

void MergeTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << serialize();
  if (!out) throw IoError("write failed: " + path.string());
}

MergeTable MergeTable::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return deserialize(buffer.str());
}

std::string digits_to_zero(std::string_view token) {
  std::string out(token);
  for (char& c : out) {
    if (c >= '0' && c <= '9') c = '0';
  }
  return out;
}

MergeTable learn_bpe(const std::map<std::string, std::size_t>& corpus, std::size_t num_merges) {
  struct Word {
    std::vector<std::string> symbols;
    std::size_t count;
  };
  std::vector<Word> words;
  std::set<std::string> characters;
  for (const auto& [token, count] : corpus) {
    if (token.empty() || count == 0) continue;
    Word w{text::split_code_points(token), count};
    characters.insert(w.symbols.begin(), w.symbols.end());
    words.push_back(std::move(w));
  }
  if (words.empty()) throw EmptyCorpus();

  std::vector<MergeTable::Pair> merges;
  while (merges.size() < num_merges) {
    std::map<MergeTable::Pair, std::size_t> counts;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) counts[{w.symbols[i], w.symbols[i + 1]}] += w.count;
    }
    // std::map iterates in lexicographic order, so the first maximum wins ties.
    const MergeTable::Pair* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [pair, count] : counts) {
      if (count > best_count) {
        best = &pair;
        best_count = count;
      }
    }
    if (best == nullptr || best_count < 2) break;
    const MergeTable::Pair chosen = *best;
    for (auto& w : words) apply_merge(w.symbols, chosen.first, chosen.second);
    merges.push_back(chosen);
  }

  std::map<std::string, int> vocab;
  vocab.emplace(kUnkSubword, 0);
  for (const auto& c : characters) vocab.emplace(c, static_cast<int>(vocab.size()));
  for (const auto& [left, right] : merges) vocab.emplace(left + right, static_cast<int>(vocab.size()));
  return MergeTable(std::move(merges), std::move(vocab));
}

std::vector<std::string> segment_symbols(std::string_view token, const MergeTable& table) {
  std::vector<std::string> symbols = text::split_code_points(token);
  for (const auto& [left, right] : table.merges()) {
    if (symbols.size() < 2) break;
    apply_merge(symbols, left, right);
  }
  return symbols;
}

std::vector<int> segment(std::string_view token, const MergeTable& table) {
  const std::vector<std::string> symbols = segment_symbols(token, table);
  std::vector<int> ids;
  ids.reserve(symbols.size());
  for (const auto& s : symbols) {
    const int id = table.id_of(s);
    ids.push_back(id < 0 ? table.unk_id() : id);
  }
  return ids;
}

}  // namespace addrtag
