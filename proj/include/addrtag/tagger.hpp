// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "addrtag/core.hpp"
#include "addrtag/embed.hpp"
#include "addrtag/matrix.hpp"
#include "addrtag/nn/layers.hpp"
#include "addrtag/preprocess.hpp"
#include "addrtag/random.hpp"

namespace addrtag {

struct Seq2SeqConfig {
  std::size_t input_size = 300;
  std::size_t encoder_hidden_size = 1024;
  std::size_t decoder_hidden_size = 1024;
  std::size_t tag_embedding_size = 300;
  bool attention = false;
  /// Width of the additive-attention projection; 0 means decoder_hidden_size.
  std::size_t attention_size = 0;

  /// Throws InvalidConfig. Without attention the encoder state initialises
  /// the decoder directly, so the two hidden sizes must match.
  void validate() const;
  std::size_t effective_attention_size() const {
    return attention_size == 0 ? decoder_hidden_size : attention_size;
  }
  bool needs_bridge() const { return attention && encoder_hidden_size != decoder_hidden_size; }

  bool operator==(const Seq2SeqConfig&) const = default;
};

/// Parameter names inside TaggerModel::params.
namespace tagger_names {
inline constexpr const char* kEncoder = "encoder";
inline constexpr const char* kDecoder = "decoder";
inline constexpr const char* kTagEmbeddings = "tag_embeddings";
inline constexpr const char* kBridgeH = "bridge.h";
inline constexpr const char* kBridgeC = "bridge.c";
inline constexpr const char* kAttnDecoder = "attention.decoder";
inline constexpr const char* kAttnEncoder = "attention.encoder";
inline constexpr const char* kAttnScore = "attention.score";
inline constexpr const char* kOutput = "output";
}  // namespace tagger_names

/// Encoder LSTM -> decoder LSTM (initialised from the encoder's final state)
/// -> linear over the tag space. The tag-embedding table has one extra row,
/// index K, used as the beginning-of-sequence input.
struct TaggerModel {
  Seq2SeqConfig config;
  TagVocabulary tags;
  nn::ParamSet<float> params;

  static TaggerModel create(const Seq2SeqConfig& config, TagVocabulary tags, Rng& rng);

  /// Swaps in a new tag vocabulary and re-initialises only the tag
  /// embeddings and the output layer; every other weight is kept.
  void reset_tag_layers(TagVocabulary new_tags, Rng& rng);

  std::size_t bos_index() const { return tags.size(); }
  std::size_t output_input_size() const {
    return config.decoder_hidden_size + (config.attention ? config.encoder_hidden_size : 0);
  }
};

/// Padded embedding batch. `embeddings` is batch-major [B x max_len x width].
struct BatchedInput {
  std::size_t batch = 0;
  std::size_t max_len = 0;
  std::size_t width = 0;
  std::vector<float> embeddings;
  std::vector<std::size_t> lengths;

  static BatchedInput from_matrices(const std::vector<Matrix>& per_address);
  bool mask(std::size_t i, std::size_t t) const { return t < lengths.at(i); }
  /// Throws ShapeMismatch unless sizes agree and every length is in 1..max_len.
  void check() const;
};

struct EncoderOutput {
  std::size_t batch = 0;
  std::size_t max_len = 0;
  std::size_t hidden = 0;
  std::vector<float> outputs;  // batch-major [B x max_len x hidden]; padding rows are zero
  std::vector<std::vector<float>> final_h;
  std::vector<std::vector<float>> final_c;
  std::vector<std::size_t> lengths;

  std::span<const float> output(std::size_t i, std::size_t t) const {
    return {outputs.data() + (i * max_len + t) * hidden, hidden};
  }
};

struct DecodeOutput {
  std::vector<std::vector<std::size_t>> tag_ids;
  std::vector<std::vector<double>> probabilities;
  /// attention[i][t] = weights over address i's padded positions at step t
  /// (attention models only).
  std::vector<std::vector<std::vector<float>>> attention;
};

EncoderOutput encode(const TaggerModel& model, const BatchedInput& batch);

DecodeOutput decode(const TaggerModel& model, const EncoderOutput& encoded);

/// Additive attention distribution over one address's encoder outputs
/// [n x d_enc]; positions with mask false get exactly 0.
std::vector<float> attention_weights(const TaggerModel& model, std::span<const float> decoder_hidden,
                                     const Matrix& encoder_outputs, const std::vector<bool>& mask);

// ---- graph-level pieces shared by inference, training and grad checks ----

template <typename T>
struct EncodedGraph {
  nn::Var outputs;  // time-major [steps*B x d_enc]
  nn::Var h;
  nn::Var c;
  std::size_t batch = 0;
  std::size_t steps = 0;
  std::vector<std::uint8_t> keep;  // time-major
};

template <typename T>
EncodedGraph<T> encode_graph(nn::Tape<T>& tape, const Seq2SeqConfig& config, const nn::ParamSet<T>& params,
                             nn::Var inputs, const std::vector<std::size_t>& lengths);

struct DecodeOptions {
  /// Gold tag ids per address; enables the loss.
  const std::vector<std::vector<int>>* gold = nullptr;
  /// Probability that a step's input is the gold previous tag instead of
  /// the model's own prediction (training only).
  double teacher_forcing_ratio = 0.0;
  Rng* rng = nullptr;
  /// Adds a final step per address whose gold target is EOS.
  bool append_eos = false;
  bool record_attention = false;
};

template <typename T>
struct DecodeGraph {
  std::vector<std::vector<std::size_t>> tags;
  std::vector<std::vector<T>> probabilities;
  std::vector<std::vector<std::vector<T>>> attention;
  nn::Var loss;  // mean cross-entropy over true steps, when gold is given
  std::size_t loss_steps = 0;
};

template <typename T>
DecodeGraph<T> decode_graph(nn::Tape<T>& tape, const Seq2SeqConfig& config, const TagVocabulary& tags,
                            const nn::ParamSet<T>& params, const EncodedGraph<T>& encoded,
                            const std::vector<std::size_t>& lengths, const DecodeOptions& options);

/// Full forward + loss on a batch of tokenized addresses with gold ids.
template <typename T>
DecodeGraph<T> training_forward(nn::Tape<T>& tape, const EmbeddingProvider& provider,
                                const nn::ParamSet<T>* composer_params, const TaggerModel& model,
                                const nn::ParamSet<T>& tagger_params, const std::vector<const TokenizedAddress*>& batch,
                                const std::vector<std::vector<int>>& gold, const DecodeOptions& options);

template <typename T>
nn::Var training_loss(nn::Tape<T>& tape, const EmbeddingProvider& provider, const nn::ParamSet<T>* composer_params,
                      const TaggerModel& model, const nn::ParamSet<T>& tagger_params,
                      const std::vector<const TokenizedAddress*>& batch, const std::vector<std::vector<int>>& gold,
                      const DecodeOptions& options);

// ---- end-to-end parsing ----------------------------------------------------

struct ParseOptions {
  /// Addresses per batch. Batches are formed after a stable sort by token
  /// count, so a batch holds addresses of similar length.
  std::size_t batch_size = 32;
  /// Batches are spread over this many threads; output order is preserved.
  std::size_t threads = 1;
};

/// Preprocessor + embedding front end + tagger, i.e. everything a checkpoint
/// describes.
class AddressParser {
 public:
  AddressParser(Preprocessor preprocessor, EmbeddingProvider provider, TaggerModel model);

  /// Throws EmptyAddress(index) for the first input with no tokens.
  std::vector<ParsedAddress> parse(const std::vector<std::string>& addresses, const ParseOptions& options = {}) const;
  std::vector<ParsedAddress> parse_tokenized(const std::vector<TokenizedAddress>& addresses,
                                             const ParseOptions& options = {}) const;

  /// "vector", "vector-attention", "subword" or "subword-attention".
  std::string flavor() const;

  const Preprocessor& preprocessor() const { return preprocessor_; }
  const EmbeddingProvider& provider() const { return provider_; }
  EmbeddingProvider& provider() { return provider_; }
  const TaggerModel& model() const { return model_; }
  TaggerModel& model() { return model_; }

 private:
  Preprocessor preprocessor_;
  EmbeddingProvider provider_;
  TaggerModel model_;
};

std::vector<ParsedAddress> parse(const TaggerModel& model, const std::vector<std::string>& addresses,
                                 const Preprocessor& preprocessor, const EmbeddingProvider& provider,
                                 std::size_t batch_size);

}  // namespace addrtag
