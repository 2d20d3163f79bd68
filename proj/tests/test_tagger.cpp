// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <numeric>

#include "addrtag/bpe.hpp"
#include "addrtag/synth.hpp"
#include "addrtag/tagger.hpp"
#include "fixtures.hpp"
#include "reference.hpp"

using namespace addrtag;
using namespace fixtures;
namespace tn = addrtag::tagger_names;

namespace {

struct RefDecode {
  std::vector<std::size_t> tags;
  std::vector<double> probs;
};

/// Independent greedy decode for one address from its embedding rows.
RefDecode reference_tagger(const TaggerModel& m, const Matrix& x) {
  const ref::Params p = m.params.cast<double>();
  const auto& cfg = m.config;
  ref::Vec h(cfg.encoder_hidden_size, 0.0), c(cfg.encoder_hidden_size, 0.0);
  std::vector<ref::Vec> enc;
  for (std::size_t t = 0; t < x.rows; ++t) {
    ref::Vec row(x.data.begin() + t * x.cols, x.data.begin() + (t + 1) * x.cols);
    ref::lstm_step(p, tn::kEncoder, row, h, c);
    enc.push_back(h);
  }
  if (cfg.needs_bridge()) {
    const std::string bh = tn::kBridgeH, bc = tn::kBridgeC;
    const ref::Vec h2 = ref::affine(h, p.at(bh + ".W"), &p.at(bh + ".b"));
    c = ref::affine(c, p.at(bc + ".W"), &p.at(bc + ".b"));
    h = h2;
  }
  const auto& emb = p.at(tn::kTagEmbeddings);
  const std::size_t k = m.tags.size();
  const std::string out = tn::kOutput;
  std::size_t prev = k;
  RefDecode r;
  for (std::size_t t = 0; t < x.rows; ++t) {
    ref::Vec in(emb.value.begin() + prev * emb.cols, emb.value.begin() + (prev + 1) * emb.cols);
    ref::lstm_step(p, tn::kDecoder, in, h, c);
    ref::Vec feat = h;
    if (cfg.attention) {
      const std::string ad = tn::kAttnDecoder, ae = tn::kAttnEncoder, as = tn::kAttnScore;
      const ref::Vec q = ref::affine(h, p.at(ad + ".W"), nullptr);
      ref::Vec scores;
      for (const auto& e : enc) {
        ref::Vec s = ref::affine(e, p.at(ae + ".W"), nullptr);
        for (std::size_t j = 0; j < s.size(); ++j) s[j] = std::tanh(s[j] + q[j]);
        scores.push_back(ref::affine(s, p.at(as + ".W"), nullptr)[0]);
      }
      const ref::Vec w = ref::softmax(scores);
      ref::Vec ctx(cfg.encoder_hidden_size, 0.0);
      for (std::size_t j = 0; j < enc.size(); ++j) {
        for (std::size_t d = 0; d < ctx.size(); ++d) ctx[d] += w[j] * enc[j][d];
      }
      feat.insert(feat.end(), ctx.begin(), ctx.end());
    }
    const ref::Vec probs = ref::softmax(ref::affine(feat, p.at(out + ".W"), &p.at(out + ".b")));
    std::size_t best = k;
    for (std::size_t j = 0; j < k; ++j) {
      if (j == m.tags.eos_index()) continue;
      if (best == k || probs[j] > probs[best]) best = j;
    }
    r.tags.push_back(best);
    r.probs.push_back(probs[best]);
    prev = best;
  }
  return r;
}

}  // namespace

TEST_CASE("config validation") {
  Seq2SeqConfig c = tiny(false);
  CHECK_NOTHROW(c.validate());
  c.decoder_hidden_size = 7;
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
  c.attention = true;
  CHECK_NOTHROW(c.validate());
  CHECK(c.needs_bridge());
  c.tag_embedding_size = 0;
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
  const Seq2SeqConfig d;
  CHECK(d.encoder_hidden_size == 1024);
  CHECK(d.decoder_hidden_size == 1024);
  CHECK(d.input_size == 300);
  CHECK(d.tag_embedding_size == 300);
}

TEST_CASE("model layout") {
  Rng rng(1);
  const TaggerModel m = TaggerModel::create(tiny(true), default_tag_vocabulary(), rng);
  CHECK(m.params.at(tn::kTagEmbeddings).rows == 10);
  CHECK(m.params.at(tn::kTagEmbeddings).cols == 4);
  CHECK(m.params.at("output.W").rows == 5 + 6);
  CHECK(m.params.at("output.W").cols == 9);
  CHECK(m.params.contains("bridge.h.W"));
  CHECK(m.params.at("attention.score.W").cols == 1);
  Rng rng2(1);
  const TaggerModel plain = TaggerModel::create(tiny(false), default_tag_vocabulary(), rng2);
  CHECK_FALSE(plain.params.contains("bridge.h.W"));
  CHECK_FALSE(plain.params.contains("attention.score.W"));
}

TEST_CASE("reset_tag_layers keeps every other weight") {
  Rng rng(2);
  TaggerModel m = TaggerModel::create(tiny(true), default_tag_vocabulary(), rng);
  const TaggerModel before = m;
  m.reset_tag_layers(TagVocabulary({"ATag", "AnotherTag", "EOS"}), rng);
  CHECK(m.params.at("output.W").cols == 3);
  CHECK(m.params.at(tn::kTagEmbeddings).rows == 4);
  for (const auto& p : before.params.items()) {
    if (p.name.rfind("output", 0) == 0 || p.name == tn::kTagEmbeddings) continue;
    CHECK(m.params.at(p.name).value == p.value);
  }
}

TEST_CASE("encode shapes, padding and batch independence") {
  Rng rng(3);
  TaggerModel m = TaggerModel::create(tiny(false), default_tag_vocabulary(), rng);
  const Matrix a = random_matrix(3, 8, rng);
  const Matrix b = random_matrix(7, 8, rng);
  const EncoderOutput one = encode(m, BatchedInput::from_matrices({a}));
  CHECK(one.batch == 1);
  CHECK(one.max_len == 3);
  CHECK(one.hidden == 6);
  CHECK(one.outputs.size() == 3 * 6);
  const EncoderOutput both = encode(m, BatchedInput::from_matrices({b, a}));
  CHECK(both.final_h[1] == one.final_h[0]);
  CHECK(both.final_c[1] == one.final_c[0]);
  for (std::size_t t = 3; t < 7; ++t) {
    for (float v : both.output(1, t)) CHECK(v == 0.0f);
  }
  for (auto& p : m.params.items()) std::fill(p.value.begin(), p.value.end(), 0.0f);
  const EncoderOutput zero = encode(m, BatchedInput::from_matrices({a}));
  for (float v : zero.final_h[0]) CHECK(v == 0.0f);
  for (float v : zero.final_c[0]) CHECK(v == 0.0f);
  BatchedInput bad = BatchedInput::from_matrices({a});
  bad.lengths[0] = 4;
  CHECK_THROWS_AS(bad.check(), ShapeMismatch);
}

TEST_CASE("decode matches an independent reference forward") {
  for (bool attention : {false, true}) {
    Rng rng(attention ? 5 : 4);
    TaggerModel m = TaggerModel::create(tiny(attention), default_tag_vocabulary(), rng);
    scramble(m.params, rng, 0.8);
    const std::vector<Matrix> xs = {random_matrix(5, 8, rng), random_matrix(1, 8, rng), random_matrix(3, 8, rng)};
    const DecodeOutput d = decode(m, encode(m, BatchedInput::from_matrices(xs)));
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const RefDecode r = reference_tagger(m, xs[i]);
      REQUIRE(d.tag_ids[i].size() == xs[i].rows);
      CHECK(d.tag_ids[i] == r.tags);
      for (std::size_t t = 0; t < r.probs.size(); ++t) {
        CHECK(d.probabilities[i][t] == doctest::Approx(r.probs[t]).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("decode: ties go to the lowest index and EOS is never emitted") {
  Rng rng(6);
  TaggerModel m = TaggerModel::create(tiny(false), default_tag_vocabulary(), rng);
  auto& W = m.params.at("output.W");
  auto& b = m.params.at("output.b");
  std::fill(W.value.begin(), W.value.end(), 0.0f);
  std::fill(b.value.begin(), b.value.end(), 0.0f);
  const Matrix x = random_matrix(4, 8, rng);
  DecodeOutput d = decode(m, encode(m, BatchedInput::from_matrices({x})));
  CHECK(d.tag_ids[0] == std::vector<std::size_t>(4, 0));
  for (double p : d.probabilities[0]) CHECK(p == doctest::Approx(1.0 / 9.0));

  b.value[m.tags.eos_index()] = 50.0f;
  b.value[3] = 1.0f;
  d = decode(m, encode(m, BatchedInput::from_matrices({x})));
  CHECK(d.tag_ids[0] == std::vector<std::size_t>(4, 3));
}

TEST_CASE("attention_weights examples") {
  Rng rng(7);
  TaggerModel m = TaggerModel::create(tiny(true), default_tag_vocabulary(), rng);
  const std::vector<float> h(5, 0.3f);
  const Matrix one = random_matrix(1, 6, rng);
  CHECK(attention_weights(m, h, one, {true}) == std::vector<float>{1.0f});

  auto& v = m.params.at("attention.score.W");
  std::fill(v.value.begin(), v.value.end(), 0.0f);
  const Matrix four = random_matrix(4, 6, rng);
  for (float w : attention_weights(m, h, four, {true, true, true, true})) CHECK(w == doctest::Approx(0.25f));
  Matrix same(2, 6);
  CHECK(attention_weights(m, h, same, {true, false}) == std::vector<float>{1.0f, 0.0f});
}

TEST_CASE("property: attention rows are distributions with zero padding") {
  Rng rng(8);
  TaggerModel m = TaggerModel::create(tiny(true), default_tag_vocabulary(), rng);
  scramble(m.params, rng, 1.0);
  std::vector<Matrix> xs;
  for (int i = 0; i < 12; ++i) xs.push_back(random_matrix(1 + rng.below(9), 8, rng));
  const DecodeOutput d = decode(m, encode(m, BatchedInput::from_matrices(xs)));
  REQUIRE(d.attention.size() == xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    REQUIRE(d.attention[i].size() == xs[i].rows);
    for (const auto& row : d.attention[i]) {
      double sum = 0.0;
      for (std::size_t j = 0; j < row.size(); ++j) {
        CHECK(row[j] >= 0.0f);
        if (j >= xs[i].rows) CHECK(row[j] == 0.0f);
        sum += row[j];
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
}

TEST_CASE("grad_check: full tagger training step on a 3-token address below 1e-4") {
  const Preprocessor pre = Preprocessor::default_pipeline();
  const TokenizedAddress addr = pre.prepare("12 main st");
  const std::vector<std::vector<int>> gold = {{0, 1, 1}};
  for (bool subword : {false, true}) {
    for (bool attention : {false, true}) {
      INFO("subword=" << subword << " attention=" << attention);
      AddressParser p = subword ? subword_parser(attention, 9) : vector_parser(attention, 9);
      Rng rng(10);
      scramble(p.model().params, rng, 1.0);
      if (subword) scramble(p.provider().composer().params, rng, 1.0);
      nn::ParamSet<double> tagger = p.model().params.cast<double>();
      nn::ParamSet<double> comp;
      if (subword) comp = p.provider().composer().params.cast<double>();
      DecodeOptions opt;
      opt.gold = &gold;
      opt.teacher_forcing_ratio = 1.0;
      const std::vector<const TokenizedAddress*> batch = {&addr};
      const auto fn = [&](nn::Tape<double>& t) {
        return training_loss(t, p.provider(), subword ? &comp : nullptr, p.model(), tagger, batch, gold, opt);
      };
      CHECK(nn::grad_check<double>(fn, tagger, 1e-4) < 1e-4);
      if (subword) CHECK(nn::grad_check<double>(fn, comp, 1e-4) < 1e-4);
    }
  }
}

TEST_CASE("parse examples") {
  const AddressParser p = vector_parser(false);
  const auto r = p.parse({"12 main st"});
  REQUIRE(r.size() == 1);
  CHECK(r[0].tags.size() == 3);
  CHECK(r[0].tokens == std::vector<std::string>{"12", "main", "st"});
  try {
    p.parse({"12 main", ""});
    FAIL("expected EmptyAddress");
  } catch (const EmptyAddress& e) {
    CHECK(e.index == std::optional<std::size_t>(1));
  }
  CHECK_THROWS_AS(p.parse({"a"}, {0, 1}), InvalidConfig);
  CHECK(parse(p.model(), {"12 main st"}, p.preprocessor(), p.provider(), 4) == r);
  CHECK(p.flavor() == "vector");
  CHECK(vector_parser(true).flavor() == "vector-attention");
  CHECK(subword_parser(false).flavor() == "subword");
  CHECK(subword_parser(true).flavor() == "subword-attention");
}

TEST_CASE("property: every flavor obeys the length law and batching transparency") {
  const auto addresses = random_addresses(150, 1, 30, 12);
  for (bool subword : {false, true}) {
    for (bool attention : {false, true}) {
      const AddressParser p = subword ? subword_parser(attention) : vector_parser(attention);
      INFO(p.flavor());
      const auto ref = p.parse(addresses, {1, 1});
      for (std::size_t i = 0; i < addresses.size(); ++i) {
        CHECK(ref[i].tags.size() == ref[i].tokens.size());
        CHECK(ref[i].probabilities.size() == ref[i].tokens.size());
        for (std::size_t t = 0; t < ref[i].tags.size(); ++t) {
          CHECK(ref[i].tags[t] != "EOS");
          CHECK(ref[i].probabilities[t] > 0.0);
          CHECK(ref[i].probabilities[t] <= 1.0);
        }
      }
      CHECK(p.parse(addresses, {64, 1}) == ref);
      CHECK(p.parse(addresses, {7, 3}) == ref);
    }
  }
}
