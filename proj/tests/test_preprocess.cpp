// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cctype>

#include "addrtag/preprocess.hpp"
#include "addrtag/random.hpp"
#include "addrtag/synth.hpp"

using namespace addrtag;

TEST_CASE("default_preprocess examples") {
  CHECK(default_preprocess("350 Rue des Lilas, Ouest") == "350 rue des lilas ouest");
  CHECK(default_preprocess(",") == "");
  CHECK(default_preprocess("A  B") == "a b");
  CHECK(default_preprocess("  \tX,Y\n ") == "xy");
}

TEST_CASE("tokenize examples") {
  CHECK(tokenize("12 main st").tokens == std::vector<std::string>{"12", "main", "st"});
  CHECK_THROWS_AS(tokenize(""), EmptyAddress);
  CHECK(tokenize("h3t1j4").tokens == std::vector<std::string>{"h3t1j4"});
}

TEST_CASE("pipeline prepare and names") {
  const Preprocessor p = Preprocessor::default_pipeline();
  CHECK(p.step_names() == std::vector<std::string>{"strip_commas", "collapse_whitespace", "lowercase"});
  const TokenizedAddress a = p.prepare("12 Main St, Montreal");
  CHECK(a.raw == "12 Main St, Montreal");
  CHECK(a.cleaned == "12 main st montreal");
  CHECK(a.tokens.size() == 4);
  CHECK_THROWS_AS(p.prepare(" , "), EmptyAddress);
  CHECK_THROWS_AS(Preprocessor::from_names({"nope"}), InvalidConfig);
}

TEST_CASE("custom steps run in order") {
  Preprocessor p = Preprocessor::default_pipeline();
  p.add("drop_periods", [](std::string_view s) {
    std::string out;
    for (char c : s) {
      if (c != '.') out += c;
    }
    return out;
  });
  CHECK(p.apply("St. Laurent") == "st laurent");
}

TEST_CASE("property: default_preprocess is idempotent and yields clean tokens") {
  Rng rng(11);
  const std::string alphabet = "aBcD, \t\n9.-Ée";
  std::vector<std::string> inputs = random_addresses(300, 1, 12, 5);
  for (int i = 0; i < 700; ++i) {
    std::string s;
    const auto n = rng.below(20);
    for (std::uint64_t k = 0; k < n; ++k) s += alphabet[rng.below(alphabet.size())];
    inputs.push_back(s);
  }
  for (const auto& x : inputs) {
    const std::string once = default_preprocess(x);
    CHECK(default_preprocess(once) == once);
    CHECK(Preprocessor::default_pipeline().apply(once) == once);
    if (once.empty()) continue;
    for (const auto& t : tokenize(once).tokens) {
      for (unsigned char c : t) {
        CHECK_FALSE(std::isupper(c));
        CHECK(c != ',');
      }
    }
  }
}
