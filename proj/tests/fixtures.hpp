// SPDX-License-Identifier: Apache-2.0
#pragma once

// Small, fast models shared by the test suites.

#include <memory>

#include "addrtag/bpe.hpp"
#include "addrtag/synth.hpp"
#include "addrtag/tagger.hpp"

namespace fixtures {

using namespace addrtag;

inline Seq2SeqConfig tiny(bool attention, std::size_t input = 8) {
  Seq2SeqConfig c;
  c.input_size = input;
  c.encoder_hidden_size = 6;
  c.decoder_hidden_size = attention ? 5 : 6;
  c.tag_embedding_size = 4;
  c.attention = attention;
  c.attention_size = attention ? 3 : 0;
  return c;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (auto& v : m.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return m;
}

inline void scramble(nn::ParamSet<float>& ps, Rng& rng, double scale) {
  for (auto& p : ps.items()) {
    for (auto& v : p.value) v = static_cast<float>(rng.uniform(-scale, scale));
  }
}

inline AddressParser vector_parser(bool attention, std::uint64_t seed = 1, const Seq2SeqConfig* config = nullptr) {
  Rng rng(seed);
  auto table = std::make_shared<VectorTable>(synth_vector_table(8));
  return AddressParser(Preprocessor::default_pipeline(), EmbeddingProvider::from_table(table),
                       TaggerModel::create(config ? *config : tiny(attention), default_tag_vocabulary(), rng));
}

inline AddressParser subword_parser(bool attention, std::uint64_t seed = 1) {
  Rng rng(seed);
  auto merges = std::make_shared<MergeTable>(learn_bpe(token_counts(synth_addresses(100)), 30));
  SubwordComposer comp = SubwordComposer::create(merges->vocab_size(), {4, 3, 8}, rng);
  return AddressParser(Preprocessor::default_pipeline(), EmbeddingProvider::from_subwords(merges, std::move(comp)),
                       TaggerModel::create(tiny(attention), default_tag_vocabulary(), rng));
}

inline AddressParser any_parser(int flavor, std::uint64_t seed = 1) {
  return flavor < 2 ? vector_parser(flavor == 1, seed) : subword_parser(flavor == 3, seed);
}

}  // namespace fixtures
