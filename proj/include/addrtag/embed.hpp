// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "addrtag/bpe.hpp"
#include "addrtag/core.hpp"
#include "addrtag/matrix.hpp"
#include "addrtag/nn/tape.hpp"
#include "addrtag/random.hpp"

namespace addrtag {

/// Frozen word -> vector table. Out-of-vocabulary tokens get a deterministic
/// unit vector seeded from (oov_seed, token).
class VectorTable {
 public:
  explicit VectorTable(std::size_t dim, std::uint64_t oov_seed = 0);

  /// Only for building a table; a loaded table is shared as const.
  void add(const std::string& word, std::span<const float> vector);

  /// `word v1 ... v_dim` per line; an optional `count dim` first line is
  /// skipped. Throws ParseError on ragged rows or bad numbers.
  static VectorTable load(const std::filesystem::path& path, std::uint64_t oov_seed = 0);
  void save(const std::filesystem::path& path) const;

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return words_.size(); }
  std::uint64_t oov_seed() const { return oov_seed_; }
  bool contains(std::string_view word) const;

  std::vector<float> lookup(std::string_view token) const;
  void lookup_into(std::string_view token, float* out) const;

  const std::vector<std::string>& words() const { return words_; }
  const std::vector<float>& data() const { return data_; }

  bool operator==(const VectorTable& other) const {
    return dim_ == other.dim_ && oov_seed_ == other.oov_seed_ && words_ == other.words_ && data_ == other.data_;
  }

 private:
  std::size_t dim_;
  std::uint64_t oov_seed_;
  std::vector<std::string> words_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ComposerConfig {
  std::size_t subword_embedding_size = 100;
  std::size_t hidden_size = 300;  // per direction
  std::size_t output_size = 300;

  bool operator==(const ComposerConfig&) const = default;
};

/// Trainable subword-to-word composer: subword embeddings, a BiLSTM and a
/// projection of [forward final ; backward final] to `output_size`.
struct SubwordComposer {
  ComposerConfig config;
  std::size_t vocab_size = 0;
  nn::ParamSet<float> params;

  static SubwordComposer create(std::size_t vocab_size, const ComposerConfig& config, Rng& rng);
};

/// Parameter names used by the composer.
namespace composer_names {
inline constexpr const char* kEmbeddings = "composer.embeddings";
inline constexpr const char* kForward = "composer.fwd";
inline constexpr const char* kBackward = "composer.bwd";
inline constexpr const char* kProjection = "composer.proj";
}  // namespace composer_names

/// Builds the composer graph for several words at once; returns
/// [words.size() x output_size]. Every row depends only on its own word.
template <typename T>
nn::Var compose_graph(nn::Tape<T>& tape, const nn::ParamSet<T>& params, const std::vector<std::vector<int>>& words);

/// Word vector for one subword id sequence.
std::vector<float> compose(const SubwordComposer& composer, const std::vector<int>& subword_ids);

enum class EmbeddingKind { vector_table, subword };

/// One of the two token embedding front ends. The vector table is shared
/// and immutable; the composer's weights are owned here and trained with
/// the tagger.
class EmbeddingProvider {
 public:
  static EmbeddingProvider from_table(std::shared_ptr<const VectorTable> table);
  static EmbeddingProvider from_subwords(std::shared_ptr<const MergeTable> merges, SubwordComposer composer);

  EmbeddingKind kind() const { return kind_; }
  std::size_t width() const;

  const VectorTable& table() const { return *table_; }
  std::shared_ptr<const VectorTable> table_ptr() const { return table_; }
  const MergeTable& merges() const { return *merges_; }
  std::shared_ptr<const MergeTable> merges_ptr() const { return merges_; }
  const SubwordComposer& composer() const { return composer_; }
  SubwordComposer& composer() { return composer_; }

  /// digits_to_zero, then BPE segmentation.
  std::vector<int> subwords(std::string_view token) const;

 private:
  EmbeddingKind kind_ = EmbeddingKind::vector_table;
  std::shared_ptr<const VectorTable> table_;
  std::shared_ptr<const MergeTable> merges_;
  SubwordComposer composer_;
};

/// Embeds a padded batch, time-major: row t*B + i is token t of address i,
/// zero when t >= that address's length. `composer_params` is required for
/// the subword provider (it may be a cast copy of the provider's weights).
template <typename T>
nn::Var embed_batch(nn::Tape<T>& tape, const EmbeddingProvider& provider, const nn::ParamSet<T>* composer_params,
                    const std::vector<const TokenizedAddress*>& batch, std::size_t steps);

/// [n_tokens x width], row i embedding token i.
Matrix embed_address(const EmbeddingProvider& provider, const TokenizedAddress& address);

}  // namespace addrtag
