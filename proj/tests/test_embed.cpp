// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "addrtag/bpe.hpp"
#include "addrtag/embed.hpp"
#include "addrtag/nn/layers.hpp"
#include "addrtag/preprocess.hpp"
#include "addrtag/random.hpp"
#include "addrtag/synth.hpp"
#include "reference.hpp"

using namespace addrtag;
namespace cn = addrtag::composer_names;

namespace {

std::vector<double> reference_lstm(const ref::Params& p, const std::string& prefix,
                                   const std::vector<std::vector<double>>& xs) {
  const std::size_t hid = p.at(prefix + ".U").rows;
  ref::Vec h(hid, 0.0), c(hid, 0.0);
  for (const auto& x : xs) ref::lstm_step(p, prefix, x, h, c);
  return h;
}

std::vector<double> reference_compose(const nn::ParamSet<double>& p, const std::vector<int>& ids) {
  const auto& table = p.at(cn::kEmbeddings);
  std::vector<std::vector<double>> xs;
  for (int id : ids) {
    xs.emplace_back(table.value.begin() + id * table.cols, table.value.begin() + (id + 1) * table.cols);
  }
  const std::string f = cn::kForward, b = cn::kBackward, pr = cn::kProjection;
  const auto hf = reference_lstm(p, f, xs);
  std::vector<std::vector<double>> rev(xs.rbegin(), xs.rend());
  const auto hb = reference_lstm(p, b, rev);
  std::vector<double> cat = hf;
  cat.insert(cat.end(), hb.begin(), hb.end());
  return ref::affine(cat, p.at(pr + ".W"), &p.at(pr + ".b"));
}

std::shared_ptr<MergeTable> small_merges() {
  return std::make_shared<MergeTable>(learn_bpe(token_counts(synth_addresses(100)), 40));
}

}  // namespace

TEST_CASE("vector table lookup and OOV vectors") {
  VectorTable t(3, 17);
  const std::vector<float> v = {1.0f, 2.0f, 3.0f};
  t.add("main", v);
  CHECK(t.lookup("main") == v);
  CHECK(t.contains("main"));
  CHECK_THROWS_AS(t.add("bad", std::vector<float>{1.0f}), ShapeMismatch);

  const auto a = t.lookup("zzz");
  CHECK(a == t.lookup("zzz"));
  double norm = 0.0;
  for (float x : a) norm += double(x) * x;
  CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(VectorTable(3, 18).lookup("zzz") != a);
}

TEST_CASE("property: distinct OOV tokens get distinct vectors") {
  VectorTable t(300, 5);
  std::set<std::vector<float>> seen;
  for (int i = 0; i < 2000; ++i) seen.insert(t.lookup("oov-" + std::to_string(i)));
  CHECK(seen.size() == 2000);
}

TEST_CASE("vector table file format") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto path = dir / "addrtag_vectors_test.txt";
  {
    std::ofstream out(path);
    out << "2 3\nmain 0.5 -1 2\nst 0 0.25 1e-3\n";
  }
  VectorTable t = VectorTable::load(path);
  CHECK(t.size() == 2);
  CHECK(t.dim() == 3);
  CHECK(t.lookup("st") == std::vector<float>{0.0f, 0.25f, 1e-3f});
  t.save(path);
  const VectorTable back = VectorTable::load(path);
  CHECK(back.words() == t.words());
  CHECK(back.data() == t.data());
  {
    std::ofstream out(path);
    out << "main 0.5 -1 2\nst 0 0.25\n";
  }
  try {
    VectorTable::load(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line == 2);
  }
  std::filesystem::remove(path);
}

TEST_CASE("composer: zero parameters give a zero vector") {
  Rng rng(1);
  SubwordComposer c = SubwordComposer::create(5, {}, rng);
  for (auto& p : c.params.items()) std::fill(p.value.begin(), p.value.end(), 0.0f);
  const auto out = compose(c, {0, 3, 4});
  CHECK(out.size() == 300);
  for (float x : out) CHECK(x == 0.0f);
}

TEST_CASE("composer: default width is 300") {
  Rng rng(2);
  const SubwordComposer c = SubwordComposer::create(7, {}, rng);
  CHECK(compose(c, {1}).size() == 300);
  CHECK(compose(c, {1, 2, 6, 0}).size() == 300);
}

TEST_CASE("composer: tiny forward pass against a hand-written reference") {
  Rng rng(31);
  const ComposerConfig cfg{2, 2, 3};
  SubwordComposer c = SubwordComposer::create(3, cfg, rng);
  for (auto& p : c.params.items()) {
    for (auto& v : p.value) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  }
  const nn::ParamSet<double> d = c.params.cast<double>();
  const std::vector<int> ids = {0, 1, 0};
  const auto expected = reference_compose(d, ids);
  nn::Tape<double> t(false);
  const auto got = t.values(compose_graph(t, d, {ids}));
  REQUIRE(got.size() == 3);
  for (std::size_t j = 0; j < 3; ++j) CHECK(got[j] == doctest::Approx(expected[j]).epsilon(1e-12));
  const auto f = compose(c, ids);
  for (std::size_t j = 0; j < 3; ++j) CHECK(double(f[j]) == doctest::Approx(expected[j]).epsilon(1e-5));
}

TEST_CASE("grad_check: subword composer below 1e-4") {
  Rng rng(6);
  const ComposerConfig cfg{3, 2, 2};
  const SubwordComposer c = SubwordComposer::create(4, cfg, rng);
  nn::ParamSet<double> d = c.params.cast<double>();
  const std::vector<std::vector<int>> words = {{0, 1, 2}, {3}, {2, 2}};
  const auto fn = [&](nn::Tape<double>& t) {
    const nn::Var out = compose_graph(t, d, words);
    return t.sum(t.mul(out, t.tanh(out)));
  };
  CHECK(nn::grad_check<double>(fn, d, 1e-5) < 1e-4);
}

TEST_CASE("property: composing alone equals composing inside a batch") {
  Rng rng(8);
  const SubwordComposer c = SubwordComposer::create(20, {4, 5, 6}, rng);
  std::vector<std::vector<int>> words;
  for (int i = 0; i < 25; ++i) {
    std::vector<int> w(1 + rng.below(7));
    for (auto& id : w) id = static_cast<int>(rng.below(20));
    words.push_back(w);
  }
  nn::Tape<float> t(false);
  const auto all = t.values(compose_graph(t, c.params, words));
  for (std::size_t u = 0; u < words.size(); ++u) {
    const auto one = compose(c, words[u]);
    for (std::size_t j = 0; j < 6; ++j) CHECK(one[j] == all[u * 6 + j]);
  }
}

TEST_CASE("embed_address") {
  const Preprocessor pre = Preprocessor::default_pipeline();
  const TokenizedAddress a = pre.prepare("12 main st main");
  SUBCASE("vector table") {
    auto table = std::make_shared<VectorTable>(synth_vector_table(300));
    const auto provider = EmbeddingProvider::from_table(table);
    const Matrix m = embed_address(provider, a);
    CHECK(m.rows == 4);
    CHECK(m.cols == 300);
    for (std::size_t j = 0; j < 300; ++j) CHECK(m(1, j) == m(3, j));
    // No digit zeroing on this path.
    const Matrix h = embed_address(provider, pre.prepare("h3t"));
    CHECK(std::vector<float>(h.data.begin(), h.data.end()) == table->lookup("h3t"));
    CHECK(table->lookup("h3t") != table->lookup("h0t"));
  }
  SUBCASE("subwords") {
    auto merges = small_merges();
    Rng rng(3);
    auto provider = EmbeddingProvider::from_subwords(merges, SubwordComposer::create(merges->vocab_size(), {}, rng));
    const Matrix m = embed_address(provider, a);
    CHECK(m.rows == 4);
    CHECK(m.cols == 300);
    for (std::size_t j = 0; j < 300; ++j) CHECK(m(1, j) == m(3, j));
    CHECK(provider.subwords("h3t") == segment("h0t", *merges));
    const Matrix z = embed_address(provider, pre.prepare("12 21"));
    for (std::size_t j = 0; j < 300; ++j) CHECK(z(0, j) == z(1, j));
  }
}

TEST_CASE("provider rejects a mismatched composer") {
  auto merges = small_merges();
  Rng rng(3);
  CHECK_THROWS_AS(
      EmbeddingProvider::from_subwords(merges, SubwordComposer::create(merges->vocab_size() + 1, {}, rng)),
      InvalidConfig);
}

TEST_CASE("property: embedding rows equal token count") {
  auto table = std::make_shared<VectorTable>(synth_vector_table(16));
  const auto provider = EmbeddingProvider::from_table(table);
  const Preprocessor pre = Preprocessor::default_pipeline();
  for (const auto& s : random_addresses(200, 1, 30, 4)) {
    const TokenizedAddress a = pre.prepare(s);
    CHECK(embed_address(provider, a).rows == a.tokens.size());
  }
}
