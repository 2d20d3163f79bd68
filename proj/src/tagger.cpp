// SPDX-License-Identifier: Apache-2.0
#include "addrtag/tagger.hpp"

#include <algorithm>
#include <future>
#include <numeric>
#include <thread>

namespace addrtag {

namespace tn = tagger_names;
using nn::LstmRefs;
using nn::LstmState;
using nn::Tape;
using nn::Var;

void Seq2SeqConfig::validate() const {
  if (input_size == 0 || encoder_hidden_size == 0 || decoder_hidden_size == 0 || tag_embedding_size == 0) {
    throw InvalidConfig("all Seq2Seq sizes must be >= 1");
  }
  if (!attention && encoder_hidden_size != decoder_hidden_size) {
    throw InvalidConfig("decoder_hidden_size must equal encoder_hidden_size when attention is off");
  }
}

namespace {

void add_tag_embeddings(nn::ParamSet<float>& params, const Seq2SeqConfig& config, std::size_t k, Rng& rng) {
  nn::Parameter<float>& emb = params.contains(tn::kTagEmbeddings)
                                  ? params.reshape(tn::kTagEmbeddings, k + 1, config.tag_embedding_size)
                                  : params.add(tn::kTagEmbeddings, k + 1, config.tag_embedding_size);
  nn::fill_uniform(emb, rng, 1.0 / std::sqrt(static_cast<double>(config.tag_embedding_size)));
}

void add_output(nn::ParamSet<float>& params, std::size_t k, std::size_t out_in, Rng& rng) {
  const std::string w = std::string(tn::kOutput) + ".W";
  const std::string b = std::string(tn::kOutput) + ".b";
  if (params.contains(w)) {
    nn::fill_uniform(params.reshape(w, out_in, k), rng, 1.0 / std::sqrt(static_cast<double>(out_in)));
    params.reshape(b, 1, k);
  } else {
    nn::add_linear(params, tn::kOutput, out_in, k, rng);
  }
}

}  // namespace

TaggerModel TaggerModel::create(const Seq2SeqConfig& config, TagVocabulary tags, Rng& rng) {
  config.validate();
  TaggerModel m{config, std::move(tags), {}};
  const std::size_t k = m.tags.size();
  nn::add_lstm(m.params, tn::kEncoder, config.input_size, config.encoder_hidden_size, rng);
  if (config.needs_bridge()) {
    nn::add_linear(m.params, tn::kBridgeH, config.encoder_hidden_size, config.decoder_hidden_size, rng);
    nn::add_linear(m.params, tn::kBridgeC, config.encoder_hidden_size, config.decoder_hidden_size, rng);
  }
  nn::add_lstm(m.params, tn::kDecoder, config.tag_embedding_size, config.decoder_hidden_size, rng);
  add_tag_embeddings(m.params, config, k, rng);
  if (config.attention) {
    const std::size_t a = config.effective_attention_size();
    nn::add_linear(m.params, tn::kAttnDecoder, config.decoder_hidden_size, a, rng, false);
    nn::add_linear(m.params, tn::kAttnEncoder, config.encoder_hidden_size, a, rng, false);
    nn::add_linear(m.params, tn::kAttnScore, a, 1, rng, false);
  }
  add_output(m.params, k, m.output_input_size(), rng);
  return m;
}

void TaggerModel::reset_tag_layers(TagVocabulary new_tags, Rng& rng) {
  tags = std::move(new_tags);
  add_tag_embeddings(params, config, tags.size(), rng);
  add_output(params, tags.size(), output_input_size(), rng);
}

// ---- batched input -----------------------------------------------------------

BatchedInput BatchedInput::from_matrices(const std::vector<Matrix>& per_address) {
  BatchedInput b;
  b.batch = per_address.size();
  if (b.batch == 0) return b;
  b.width = per_address[0].cols;
  for (const Matrix& m : per_address) {
    if (m.cols != b.width) throw ShapeMismatch("BatchedInput: embedding widths differ");
    b.max_len = std::max(b.max_len, m.rows);
    b.lengths.push_back(m.rows);
  }
  b.embeddings.assign(b.batch * b.max_len * b.width, 0.0f);
  for (std::size_t i = 0; i < b.batch; ++i) {
    std::copy(per_address[i].data.begin(), per_address[i].data.end(),
              b.embeddings.begin() + static_cast<std::ptrdiff_t>(i * b.max_len * b.width));
  }
  return b;
}

void BatchedInput::check() const {
  if (lengths.size() != batch) throw ShapeMismatch("BatchedInput: lengths size");
  if (embeddings.size() != batch * max_len * width) throw ShapeMismatch("BatchedInput: embeddings size");
  for (const std::size_t n : lengths) {
    if (n == 0 || n > max_len) throw ShapeMismatch("BatchedInput: length out of range");
  }
}

// ---- graphs ------------------------------------------------------------------

namespace {

std::vector<std::uint8_t> step_keep(const std::vector<std::size_t>& lengths, std::size_t t) {
  std::vector<std::uint8_t> keep(lengths.size());
  for (std::size_t i = 0; i < lengths.size(); ++i) keep[i] = t < lengths[i] ? 1 : 0;
  return keep;
}

bool all_set(const std::vector<std::uint8_t>& keep) {
  return std::all_of(keep.begin(), keep.end(), [](std::uint8_t k) { return k != 0; });
}

}  // namespace

template <typename T>
EncodedGraph<T> encode_graph(Tape<T>& t, const Seq2SeqConfig& config, const nn::ParamSet<T>& params, Var inputs,
                             const std::vector<std::size_t>& lengths) {
  const std::size_t batch = lengths.size();
  if (batch == 0) throw ShapeMismatch("encode: empty batch");
  const std::size_t steps = *std::max_element(lengths.begin(), lengths.end());
  if (t.rows(inputs) != steps * batch || t.cols(inputs) != config.input_size) {
    throw ShapeMismatch("encode: inputs are [" + std::to_string(t.rows(inputs)) + "x" +
                        std::to_string(t.cols(inputs)) + "], expected [" + std::to_string(steps * batch) + "x" +
                        std::to_string(config.input_size) + "]");
  }
  const LstmRefs<T> w = LstmRefs<T>::from(params, tn::kEncoder);
  if (w.input != config.input_size || w.hidden != config.encoder_hidden_size) {
    throw ShapeMismatch("encoder weights do not match the configuration");
  }
  const Var gx = t.add_row(t.matmul(inputs, t.param(*w.W)), t.param(*w.b));
  const Var U = t.param(*w.U);
  LstmState state{t.zeros(batch, w.hidden), t.zeros(batch, w.hidden)};
  EncodedGraph<T> out;
  out.batch = batch;
  out.steps = steps;
  std::vector<Var> rows;
  for (std::size_t s = 0; s < steps; ++s) {
    std::vector<std::uint8_t> keep = step_keep(lengths, s);
    out.keep.insert(out.keep.end(), keep.begin(), keep.end());
    const LstmState next = nn::lstm_cell(t, t.slice_rows(gx, s * batch, batch), state, U, w.hidden);
    if (all_set(keep)) {
      state = next;
      rows.push_back(next.h);
    } else {
      state = {t.blend_rows(next.h, state.h, keep), t.blend_rows(next.c, state.c, keep)};
      rows.push_back(t.mask_rows(next.h, keep));
    }
  }
  out.outputs = t.concat_rows(rows);
  out.h = state.h;
  out.c = state.c;
  return out;
}

namespace {

template <typename T>
struct AttentionRefs {
  Var wd;
  Var score;
  Var projected;  // encoder outputs @ W_e, [steps*B x A]
};

template <typename T>
Var attention_distribution(Tape<T>& t, const AttentionRefs<T>& a, Var h, const std::vector<std::uint8_t>& keep,
                           std::size_t batch) {
  const Var scores = t.additive_scores(a.projected, t.matmul(h, a.wd), a.score);
  return t.masked_softmax_groups(scores, keep, batch);
}

}  // namespace

template <typename T>
DecodeGraph<T> decode_graph(Tape<T>& t, const Seq2SeqConfig& config, const TagVocabulary& tags,
                            const nn::ParamSet<T>& params, const EncodedGraph<T>& enc,
                            const std::vector<std::size_t>& lengths, const DecodeOptions& options) {
  const std::size_t batch = enc.batch;
  const std::size_t k = tags.size();
  const std::size_t eos = tags.eos_index();
  const int bos = static_cast<int>(k);
  if (lengths.size() != batch) throw ShapeMismatch("decode: lengths size");
  const bool training = options.gold != nullptr;
  if (training && options.gold->size() != batch) throw ShapeMismatch("decode: gold size");
  if (training && options.teacher_forcing_ratio > 0.0 && options.teacher_forcing_ratio < 1.0 &&
      options.rng == nullptr) {
    throw InvalidConfig("decode: teacher forcing needs an rng");
  }

  const LstmRefs<T> dec = LstmRefs<T>::from(params, tn::kDecoder);
  const Var emb = t.param(params.at(tn::kTagEmbeddings));
  if (t.rows(emb) != k + 1) throw ShapeMismatch("tag embeddings do not match the tag vocabulary");
  if (params.at(std::string(tn::kOutput) + ".W").cols != k) {
    throw ShapeMismatch("output layer width does not match the tag vocabulary");
  }

  LstmState state{enc.h, enc.c};
  if (config.needs_bridge()) {
    state = {nn::linear(t, enc.h, params, tn::kBridgeH), nn::linear(t, enc.c, params, tn::kBridgeC)};
  }
  AttentionRefs<T> attn;
  if (config.attention) {
    attn.wd = t.param(params.at(std::string(tn::kAttnDecoder) + ".W"));
    attn.score = t.param(params.at(std::string(tn::kAttnScore) + ".W"));
    attn.projected = t.matmul(enc.outputs, t.param(params.at(std::string(tn::kAttnEncoder) + ".W")));
  }

  std::vector<std::size_t> steps_of(lengths);
  if (training && options.append_eos) {
    for (auto& n : steps_of) ++n;
  }
  const std::size_t max_steps = *std::max_element(steps_of.begin(), steps_of.end());

  DecodeGraph<T> out;
  out.tags.resize(batch);
  out.probabilities.resize(batch);
  if (options.record_attention && config.attention) out.attention.resize(batch);

  const auto gold_at = [&](std::size_t i, std::size_t s) -> int {
    const auto& g = (*options.gold)[i];
    if (s < g.size()) return g[s];
    return static_cast<int>(eos);
  };

  std::vector<int> inputs(batch, bos);
  std::vector<Var> losses;
  for (std::size_t s = 0; s < max_steps; ++s) {
    std::vector<std::uint8_t> keep = step_keep(steps_of, s);
    const bool full = all_set(keep);
    const Var x = t.gather_rows(emb, inputs);
    const LstmState next = nn::lstm_step(t, x, state, dec);
    state = full ? next : LstmState{t.blend_rows(next.h, state.h, keep), t.blend_rows(next.c, state.c, keep)};
    Var feat = next.h;
    if (config.attention) {
      const Var weights = attention_distribution(t, attn, next.h, enc.keep, batch);
      feat = t.concat_cols(next.h, t.attend(weights, enc.outputs, batch));
      if (!out.attention.empty()) {
        const T* wv = t.data(weights);
        for (std::size_t i = 0; i < batch; ++i) {
          if (!keep[i] || s >= lengths[i]) continue;
          std::vector<T> row(enc.steps);
          for (std::size_t j = 0; j < enc.steps; ++j) row[j] = wv[j * batch + i];
          out.attention[i].push_back(std::move(row));
        }
      }
    }
    const Var logits = nn::linear(t, feat, params, tn::kOutput);

    if (training) {
      std::vector<int> targets(batch, 0);
      std::vector<T> weights(batch, T(0));
      for (std::size_t i = 0; i < batch; ++i) {
        if (!keep[i]) continue;
        targets[i] = gold_at(i, s);
        weights[i] = T(1);
        ++out.loss_steps;
      }
      losses.push_back(t.softmax_cross_entropy(logits, std::move(targets), std::move(weights)));
    }

    const T* lv = t.data(logits);
    std::vector<T> probs(k);
    for (std::size_t i = 0; i < batch; ++i) {
      const T* row = lv + i * k;
      const std::size_t best = nn::argmax(row, k, eos);
      if (s < lengths[i]) {
        nn::softmax_row(row, k, probs.data());
        out.tags[i].push_back(best);
        out.probabilities[i].push_back(probs[best]);
      }
      int feed = static_cast<int>(best);
      if (training && s < (*options.gold)[i].size()) {
        const double r = options.teacher_forcing_ratio;
        const bool force = r >= 1.0 ? true : r <= 0.0 ? false : options.rng->bernoulli(r);
        if (force) feed = gold_at(i, s);
      }
      inputs[i] = feed;
    }
  }

  if (training) {
    Var total = losses.size() == 1 ? losses[0] : t.concat_rows(losses);
    if (losses.size() > 1) total = t.sum(total);
    out.loss = t.scale(total, T(1) / static_cast<T>(std::max<std::size_t>(out.loss_steps, 1)));
  }
  return out;
}

template <typename T>
DecodeGraph<T> training_forward(Tape<T>& t, const EmbeddingProvider& provider, const nn::ParamSet<T>* composer_params,
                                const TaggerModel& model, const nn::ParamSet<T>& tagger_params,
                                const std::vector<const TokenizedAddress*>& batch,
                                const std::vector<std::vector<int>>& gold, const DecodeOptions& options) {
  if (batch.empty()) throw ShapeMismatch("training batch is empty");
  std::vector<std::size_t> lengths;
  for (const TokenizedAddress* a : batch) lengths.push_back(a->tokens.size());
  const std::size_t steps = *std::max_element(lengths.begin(), lengths.end());
  const Var inputs = embed_batch(t, provider, composer_params, batch, steps);
  const EncodedGraph<T> enc = encode_graph(t, model.config, tagger_params, inputs, lengths);
  DecodeOptions opts = options;
  opts.gold = &gold;
  return decode_graph(t, model.config, model.tags, tagger_params, enc, lengths, opts);
}

template <typename T>
Var training_loss(Tape<T>& t, const EmbeddingProvider& provider, const nn::ParamSet<T>* composer_params,
                  const TaggerModel& model, const nn::ParamSet<T>& tagger_params,
                  const std::vector<const TokenizedAddress*>& batch, const std::vector<std::vector<int>>& gold,
                  const DecodeOptions& options) {
  return training_forward(t, provider, composer_params, model, tagger_params, batch, gold, options).loss;
}

template EncodedGraph<float> encode_graph<float>(Tape<float>&, const Seq2SeqConfig&, const nn::ParamSet<float>&, Var,
                                                 const std::vector<std::size_t>&);
template EncodedGraph<double> encode_graph<double>(Tape<double>&, const Seq2SeqConfig&, const nn::ParamSet<double>&,
                                                   Var, const std::vector<std::size_t>&);
template DecodeGraph<float> decode_graph<float>(Tape<float>&, const Seq2SeqConfig&, const TagVocabulary&,
                                                const nn::ParamSet<float>&, const EncodedGraph<float>&,
                                                const std::vector<std::size_t>&, const DecodeOptions&);
template DecodeGraph<double> decode_graph<double>(Tape<double>&, const Seq2SeqConfig&, const TagVocabulary&,
                                                  const nn::ParamSet<double>&, const EncodedGraph<double>&,
                                                  const std::vector<std::size_t>&, const DecodeOptions&);
template DecodeGraph<float> training_forward<float>(Tape<float>&, const EmbeddingProvider&,
                                                    const nn::ParamSet<float>*, const TaggerModel&,
                                                    const nn::ParamSet<float>&,
                                                    const std::vector<const TokenizedAddress*>&,
                                                    const std::vector<std::vector<int>>&, const DecodeOptions&);
template DecodeGraph<double> training_forward<double>(Tape<double>&, const EmbeddingProvider&,
                                                      const nn::ParamSet<double>*, const TaggerModel&,
                                                      const nn::ParamSet<double>&,
                                                      const std::vector<const TokenizedAddress*>&,
                                                      const std::vector<std::vector<int>>&, const DecodeOptions&);
template Var training_loss<float>(Tape<float>&, const EmbeddingProvider&, const nn::ParamSet<float>*,
                                  const TaggerModel&, const nn::ParamSet<float>&,
                                  const std::vector<const TokenizedAddress*>&, const std::vector<std::vector<int>>&,
                                  const DecodeOptions&);
template Var training_loss<double>(Tape<double>&, const EmbeddingProvider&, const nn::ParamSet<double>*,
                                   const TaggerModel&, const nn::ParamSet<double>&,
                                   const std::vector<const TokenizedAddress*>&, const std::vector<std::vector<int>>&,
                                   const DecodeOptions&);

// ---- value-level API -----------------------------------------------------------

namespace {

std::vector<float> to_time_major(const BatchedInput& b) {
  std::vector<float> out(b.embeddings.size());
  for (std::size_t i = 0; i < b.batch; ++i) {
    for (std::size_t s = 0; s < b.max_len; ++s) {
      const float* src = b.embeddings.data() + (i * b.max_len + s) * b.width;
      std::copy(src, src + b.width, out.begin() + static_cast<std::ptrdiff_t>((s * b.batch + i) * b.width));
    }
  }
  return out;
}

}  // namespace

EncoderOutput encode(const TaggerModel& model, const BatchedInput& batch) {
  batch.check();
  if (batch.batch == 0) throw ShapeMismatch("encode: empty batch");
  if (batch.width != model.config.input_size) throw ShapeMismatch("encode: embedding width");
  // Trailing all-padding steps are dropped; their outputs stay zero.
  const std::size_t steps = *std::max_element(batch.lengths.begin(), batch.lengths.end());
  std::vector<float> tm = to_time_major(batch);
  tm.resize(steps * batch.batch * batch.width);
  Tape<float> t(false);
  const Var inputs = t.constant(steps * batch.batch, batch.width, std::move(tm));
  const EncodedGraph<float> g = encode_graph(t, model.config, model.params, inputs, batch.lengths);
  EncoderOutput out;
  out.batch = batch.batch;
  out.max_len = batch.max_len;
  out.hidden = model.config.encoder_hidden_size;
  out.lengths = batch.lengths;
  out.outputs.assign(out.batch * out.max_len * out.hidden, 0.0f);
  const float* ov = t.data(g.outputs);
  for (std::size_t s = 0; s < g.steps; ++s) {
    for (std::size_t i = 0; i < out.batch; ++i) {
      const float* src = ov + (s * out.batch + i) * out.hidden;
      std::copy(src, src + out.hidden,
                out.outputs.begin() + static_cast<std::ptrdiff_t>((i * out.max_len + s) * out.hidden));
    }
  }
  const float* hv = t.data(g.h);
  const float* cv = t.data(g.c);
  for (std::size_t i = 0; i < out.batch; ++i) {
    out.final_h.emplace_back(hv + i * out.hidden, hv + (i + 1) * out.hidden);
    out.final_c.emplace_back(cv + i * out.hidden, cv + (i + 1) * out.hidden);
  }
  return out;
}

DecodeOutput decode(const TaggerModel& model, const EncoderOutput& encoded) {
  const std::size_t batch = encoded.batch;
  if (batch == 0) return {};
  if (encoded.lengths.size() != batch || encoded.final_h.size() != batch || encoded.final_c.size() != batch ||
      encoded.hidden != model.config.encoder_hidden_size) {
    throw ShapeMismatch("decode: encoder output shape");
  }
  const std::size_t steps = *std::max_element(encoded.lengths.begin(), encoded.lengths.end());
  const std::size_t hid = encoded.hidden;
  Tape<float> t(false);
  EncodedGraph<float> g;
  g.batch = batch;
  g.steps = steps;
  std::vector<float> outs(steps * batch * hid);
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t i = 0; i < batch; ++i) {
      const auto row = encoded.output(i, s);
      std::copy(row.begin(), row.end(), outs.begin() + static_cast<std::ptrdiff_t>((s * batch + i) * hid));
      g.keep.push_back(s < encoded.lengths[i] ? 1 : 0);
    }
  }
  std::vector<float> h, c;
  for (std::size_t i = 0; i < batch; ++i) {
    h.insert(h.end(), encoded.final_h[i].begin(), encoded.final_h[i].end());
    c.insert(c.end(), encoded.final_c[i].begin(), encoded.final_c[i].end());
  }
  g.outputs = t.constant(steps * batch, hid, std::move(outs));
  g.h = t.constant(batch, hid, std::move(h));
  g.c = t.constant(batch, hid, std::move(c));
  DecodeOptions opts;
  opts.record_attention = model.config.attention;
  DecodeGraph<float> d = decode_graph(t, model.config, model.tags, model.params, g, encoded.lengths, opts);
  DecodeOutput out;
  out.tag_ids = std::move(d.tags);
  for (auto& row : d.probabilities) out.probabilities.emplace_back(row.begin(), row.end());
  out.attention = std::move(d.attention);
  return out;
}

std::vector<float> attention_weights(const TaggerModel& model, std::span<const float> decoder_hidden,
                                     const Matrix& encoder_outputs, const std::vector<bool>& mask) {
  if (!model.config.attention) throw InvalidConfig("attention_weights on a model without attention");
  if (decoder_hidden.size() != model.config.decoder_hidden_size ||
      encoder_outputs.cols != model.config.encoder_hidden_size || mask.size() != encoder_outputs.rows) {
    throw ShapeMismatch("attention_weights: shapes");
  }
  Tape<float> t(false);
  AttentionRefs<float> a;
  a.wd = t.param(model.params.at(std::string(tn::kAttnDecoder) + ".W"));
  a.score = t.param(model.params.at(std::string(tn::kAttnScore) + ".W"));
  const Var enc = t.constant(encoder_outputs.rows, encoder_outputs.cols, encoder_outputs.data);
  a.projected = t.matmul(enc, t.param(model.params.at(std::string(tn::kAttnEncoder) + ".W")));
  const Var h = t.constant(1, decoder_hidden.size(), std::vector<float>(decoder_hidden.begin(), decoder_hidden.end()));
  std::vector<std::uint8_t> keep(mask.begin(), mask.end());
  return t.values(attention_distribution(t, a, h, keep, 1));
}

// ---- parser --------------------------------------------------------------------

AddressParser::AddressParser(Preprocessor preprocessor, EmbeddingProvider provider, TaggerModel model)
    : preprocessor_(std::move(preprocessor)), provider_(std::move(provider)), model_(std::move(model)) {
  if (provider_.width() != model_.config.input_size) {
    throw InvalidConfig("embedding width " + std::to_string(provider_.width()) + " does not match tagger input size " +
                        std::to_string(model_.config.input_size));
  }
}

std::string AddressParser::flavor() const {
  std::string f = provider_.kind() == EmbeddingKind::subword ? "subword" : "vector";
  if (model_.config.attention) f += "-attention";
  return f;
}

namespace {

std::vector<ParsedAddress> run_batch(const EmbeddingProvider& provider, const TaggerModel& model,
                                     const std::vector<const TokenizedAddress*>& batch) {
  std::vector<std::size_t> lengths;
  for (const TokenizedAddress* a : batch) lengths.push_back(a->tokens.size());
  const std::size_t steps = *std::max_element(lengths.begin(), lengths.end());
  Tape<float> t(false);
  const Var inputs = embed_batch(t, provider, &provider.composer().params, batch, steps);
  const EncodedGraph<float> enc = encode_graph(t, model.config, model.params, inputs, lengths);
  const DecodeGraph<float> dec = decode_graph(t, model.config, model.tags, model.params, enc, lengths, {});
  std::vector<ParsedAddress> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out[i].tokens = batch[i]->tokens;
    for (std::size_t s = 0; s < lengths[i]; ++s) {
      out[i].tags.push_back(model.tags.name_of(dec.tags[i][s]));
      out[i].probabilities.push_back(static_cast<double>(dec.probabilities[i][s]));
    }
  }
  return out;
}

std::vector<TokenizedAddress> prepare_all(const Preprocessor& preprocessor, const std::vector<std::string>& addresses) {
  std::vector<TokenizedAddress> prepared;
  prepared.reserve(addresses.size());
  for (std::size_t i = 0; i < addresses.size(); ++i) {
    try {
      prepared.push_back(preprocessor.prepare(addresses[i]));
    } catch (const EmptyAddress&) {
      throw EmptyAddress(i);
    }
  }
  return prepared;
}

std::vector<ParsedAddress> parse_all(const EmbeddingProvider& provider, const TaggerModel& model,
                                     const std::vector<TokenizedAddress>& addresses, const ParseOptions& options) {
  if (options.batch_size == 0) throw InvalidConfig("batch_size must be >= 1");
  for (std::size_t i = 0; i < addresses.size(); ++i) {
    if (addresses[i].tokens.empty()) throw EmptyAddress(i);
  }
  // Batches are filled in order of token count to minimise padding; results
  // go back to input positions.
  std::vector<std::size_t> order(addresses.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return addresses[a].tokens.size() < addresses[b].tokens.size();
  });
  std::vector<ParsedAddress> out(addresses.size());
  const std::size_t n_batches = (addresses.size() + options.batch_size - 1) / options.batch_size;
  const auto work = [&](std::size_t b) {
    const std::size_t begin = b * options.batch_size;
    const std::size_t end = std::min(addresses.size(), begin + options.batch_size);
    std::vector<const TokenizedAddress*> batch;
    for (std::size_t i = begin; i < end; ++i) batch.push_back(&addresses[order[i]]);
    std::vector<ParsedAddress> parsed = run_batch(provider, model, batch);
    for (std::size_t i = begin; i < end; ++i) out[order[i]] = std::move(parsed[i - begin]);
  };
  const std::size_t threads = std::min(std::max<std::size_t>(options.threads, 1), std::max<std::size_t>(n_batches, 1));
  if (threads <= 1) {
    for (std::size_t b = 0; b < n_batches; ++b) work(b);
    return out;
  }
  std::vector<std::future<void>> jobs;
  for (std::size_t w = 0; w < threads; ++w) {
    jobs.push_back(std::async(std::launch::async, [&, w]() {
      for (std::size_t b = w; b < n_batches; b += threads) work(b);
    }));
  }
  for (auto& j : jobs) j.get();
  return out;
}

}  // namespace

std::vector<ParsedAddress> AddressParser::parse(const std::vector<std::string>& addresses,
                                                const ParseOptions& options) const {
  return parse_all(provider_, model_, prepare_all(preprocessor_, addresses), options);
}

std::vector<ParsedAddress> AddressParser::parse_tokenized(const std::vector<TokenizedAddress>& addresses,
                                                          const ParseOptions& options) const {
  return parse_all(provider_, model_, addresses, options);
}

std::vector<ParsedAddress> parse(const TaggerModel& model, const std::vector<std::string>& addresses,
                                 const Preprocessor& preprocessor, const EmbeddingProvider& provider,
                                 std::size_t batch_size) {
  if (provider.width() != model.config.input_size) throw InvalidConfig("embedding width does not match tagger input size");
  return parse_all(provider, model, prepare_all(preprocessor, addresses), ParseOptions{batch_size, 1});
}

}  // namespace addrtag
