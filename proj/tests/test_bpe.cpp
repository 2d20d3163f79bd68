// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>

#include "addrtag/bpe.hpp"
#include "addrtag/synth.hpp"
#include "addrtag/text.hpp"

using namespace addrtag;

namespace {

using Pair = std::pair<std::string, std::string>;

MergeTable low_lower() { return learn_bpe({{"low", 2}, {"lower", 1}}, 2); }

// Independent reference learner: recount every pair from scratch each round.
std::vector<Pair> reference_merges(const std::map<std::string, std::size_t>& corpus, std::size_t n) {
  std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
  for (const auto& [w, c] : corpus) {
    std::vector<std::string> sym;
    for (char ch : w) sym.emplace_back(1, ch);
    words.emplace_back(sym, c);
  }
  std::vector<Pair> out;
  for (std::size_t round = 0; round < n; ++round) {
    std::map<Pair, std::size_t> counts;
    for (const auto& [sym, c] : words) {
      for (std::size_t i = 0; i + 1 < sym.size(); ++i) counts[{sym[i], sym[i + 1]}] += c;
    }
    const Pair* best = nullptr;
    std::size_t best_n = 0;
    for (const auto& [p, c] : counts) {
      if (c > best_n) {
        best = &p;
        best_n = c;
      }
    }
    if (best == nullptr || best_n < 2) break;
    const Pair chosen = *best;
    out.push_back(chosen);
    for (auto& [sym, c] : words) {
      std::vector<std::string> next;
      for (std::size_t i = 0; i < sym.size(); ++i) {
        if (i + 1 < sym.size() && sym[i] == chosen.first && sym[i + 1] == chosen.second) {
          next.push_back(chosen.first + chosen.second);
          ++i;
        } else {
          next.push_back(sym[i]);
        }
      }
      sym = next;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("digits_to_zero") {
  CHECK(digits_to_zero("h3t 1j4") == "h0t 0j0");
  CHECK(digits_to_zero("main") == "main");
  CHECK(digits_to_zero("350") == "000");
}

TEST_CASE("learn_bpe on low/lower") {
  const MergeTable t = low_lower();
  CHECK(t.merges() == std::vector<Pair>{{"l", "o"}, {"lo", "w"}});
  CHECK(segment_symbols("lowest", t) == std::vector<std::string>{"low", "e", "s", "t"});
  CHECK(segment_symbols("low", t) == std::vector<std::string>{"low"});
  const auto ids = segment("lowest", t);
  REQUIRE(ids.size() == 4);
  CHECK(ids[0] == t.id_of("low"));
  CHECK(ids[1] == t.id_of("e"));
}

TEST_CASE("learn_bpe edge cases") {
  CHECK_THROWS_AS(learn_bpe({}, 3), EmptyCorpus);
  const MergeTable zero = learn_bpe({{"abc", 4}, {"cd", 1}}, 0);
  CHECK(zero.merges().empty());
  CHECK(zero.vocab_size() == 5);  // a b c d + UNK
  CHECK(zero.id_of(kUnkSubword) == zero.unk_id());
  CHECK(segment_symbols("abcd", zero) == std::vector<std::string>{"a", "b", "c", "d"});
  // Stops once no pair occurs twice.
  CHECK(learn_bpe({{"ab", 1}}, 10).merges().empty());
}

TEST_CASE("unknown characters map to UNK") {
  const MergeTable t = low_lower();
  const auto ids = segment("zzz", t);
  CHECK(ids == std::vector<int>{t.unk_id(), t.unk_id(), t.unk_id()});
}

TEST_CASE("merge table file round trip") {
  const MergeTable t = learn_bpe(token_counts(synth_addresses(200)), 60);
  const std::string text = t.serialize();
  CHECK(text.rfind("bpe-v1\n", 0) == 0);
  CHECK(MergeTable::deserialize(text) == t);
  const auto path = std::filesystem::temp_directory_path() / "addrtag_merges_test.txt";
  t.save(path);
  CHECK(MergeTable::load(path) == t);
  std::filesystem::remove(path);
  CHECK_THROWS(MergeTable::deserialize("bpe-v2\n---\n"));
}

TEST_CASE("property: learner matches a from-scratch recount") {
  std::map<std::string, std::size_t> counts;
  for (const auto& [w, c] : token_counts(synth_addresses(300, {3}))) counts[digits_to_zero(w)] += c;
  for (std::size_t n : {0, 1, 5, 40, 120}) {
    CHECK(learn_bpe(counts, n).merges() == reference_merges(counts, n));
  }
}

TEST_CASE("property: segmentation reconstructs the token") {
  std::map<std::string, std::size_t> counts;
  for (const auto& [w, c] : token_counts(synth_addresses(300))) counts[digits_to_zero(w)] += c;
  const MergeTable t = learn_bpe(counts, 150);
  const MergeTable none = learn_bpe(counts, 0);
  for (const auto& a : random_addresses(400, 1, 6, 9)) {
    for (const auto& tok : text::split_whitespace(a)) {
      const std::string z = digits_to_zero(tok);
      std::string joined;
      for (const auto& s : segment_symbols(z, t)) joined += s;
      CHECK(joined == z);
      CHECK(segment(z, t) == segment(z, t));
      CHECK_FALSE(segment(z, t).empty());
      CHECK(segment_symbols(z, none) == text::split_code_points(z));
    }
  }
}
