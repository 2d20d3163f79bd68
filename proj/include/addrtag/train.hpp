// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "addrtag/core.hpp"
#include "addrtag/tagger.hpp"

namespace addrtag {

/// Size overrides for a fresh model. Unset fields keep the current model's
/// values.
struct Seq2SeqOverrides {
  std::optional<std::size_t> encoder_hidden_size;
  std::optional<std::size_t> decoder_hidden_size;
  std::optional<std::size_t> tag_embedding_size;
  std::optional<bool> attention;
  std::optional<std::size_t> attention_size;

  Seq2SeqConfig apply(Seq2SeqConfig base) const;
};

struct TrainingConfig {
  double train_ratio = 0.8;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double teacher_forcing_ratio = 0.5;
  std::uint64_t seed = 0;
  std::optional<TagVocabulary> prediction_tags;
  std::optional<Seq2SeqOverrides> seq2seq_params;
  /// Adds a terminal gold EOS step to every training sequence.
  bool train_with_eos = false;
  /// Joint L2 clip over tagger and composer gradients; 0 disables.
  double clip_norm = 5.0;
  /// When set, the model with the best eval mean sequence accuracy so far is
  /// saved here after each epoch.
  std::filesystem::path checkpoint_path;

  /// Throws InvalidRatio or InvalidConfig.
  void validate() const;
};

struct EpochReport {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  /// Measured on the training batches' own decoder predictions.
  double train_sequence_accuracy = 0.0;
  double train_full_parse_accuracy = 0.0;
  std::optional<double> eval_sequence_accuracy;
  std::optional<double> eval_full_parse_accuracy;
  double seconds = 0.0;

  bool operator==(const EpochReport&) const = default;
};

struct TrainingReport {
  std::size_t train_size = 0;
  std::size_t eval_size = 0;
  std::vector<EpochReport> epochs;

  /// One JSON object per epoch.
  std::string to_jsonl() const;
  static TrainingReport from_jsonl(const std::string& text);

  bool operator==(const TrainingReport&) const = default;
};

/// floor(ratio * n), kept within [1, n - 1] when n >= 2.
std::size_t train_split_size(std::size_t n, double ratio);

/// (# positions equal) / length. Throws LengthMismatch.
double sequence_accuracy(const std::vector<std::string>& predicted, const std::vector<std::string>& gold);

struct CorpusMetrics {
  double mean_sequence_accuracy = 0.0;
  double full_parse_accuracy = 0.0;
};

/// Throws EmptyInput.
CorpusMetrics corpus_metrics(
    const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>& pairs);

/// Predicts every record and scores against its gold tags.
CorpusMetrics evaluate(const AddressParser& parser, const std::vector<DatasetRecord>& records,
                       std::size_t batch_size = 64);

struct RetrainResult {
  AddressParser parser;
  TrainingReport report;
  /// Dataset positions of the two split halves, in shuffled order.
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> eval_indices;
};

/// Seeded shuffle, split, then epochs of teacher-forced minibatch training.
/// With prediction_tags the tag embeddings and output layer are rebuilt for
/// the new vocabulary; with seq2seq_params a fresh model is built with the
/// overridden sizes (the composer is re-initialised too).
RetrainResult retrain(const AddressParser& parser, const std::vector<DatasetRecord>& dataset,
                      const TrainingConfig& config);

}  // namespace addrtag
