// SPDX-License-Identifier: Apache-2.0
#include "addrtag/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "addrtag/io.hpp"
#include "addrtag/nn/optimizer.hpp"
#include "json.hpp"

namespace addrtag {

using nlohmann::json;

Seq2SeqConfig Seq2SeqOverrides::apply(Seq2SeqConfig base) const {
  if (encoder_hidden_size) base.encoder_hidden_size = *encoder_hidden_size;
  if (decoder_hidden_size) base.decoder_hidden_size = *decoder_hidden_size;
  if (tag_embedding_size) base.tag_embedding_size = *tag_embedding_size;
  if (attention) base.attention = *attention;
  if (attention_size) base.attention_size = *attention_size;
  return base;
}

void TrainingConfig::validate() const {
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw InvalidRatio(train_ratio);
  if (epochs < 1) throw InvalidConfig("epochs must be >= 1");
  if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (!(teacher_forcing_ratio >= 0.0 && teacher_forcing_ratio <= 1.0)) {
    throw InvalidConfig("teacher_forcing_ratio must lie in [0, 1]");
  }
  if (!(learning_rate > 0.0)) throw InvalidConfig("learning_rate must be positive");
}

// ---- report -------------------------------------------------------------------

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string TrainingReport::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) {
    const json j = {{"epoch", e.epoch},
                    {"train_size", train_size},
                    {"eval_size", eval_size},
                    {"train_loss", e.train_loss},
                    {"train_sequence_accuracy", e.train_sequence_accuracy},
                    {"train_full_parse_accuracy", e.train_full_parse_accuracy},
                    {"eval_sequence_accuracy", optional_json(e.eval_sequence_accuracy)},
                    {"eval_full_parse_accuracy", optional_json(e.eval_full_parse_accuracy)},
                    {"seconds", e.seconds}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

TrainingReport TrainingReport::from_jsonl(const std::string& text) {
  TrainingReport r;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      r.train_size = j.at("train_size").get<std::size_t>();
      r.eval_size = j.at("eval_size").get<std::size_t>();
      EpochReport e;
      e.epoch = j.at("epoch").get<std::size_t>();
      e.train_loss = j.at("train_loss").get<double>();
      e.train_sequence_accuracy = j.at("train_sequence_accuracy").get<double>();
      e.train_full_parse_accuracy = j.at("train_full_parse_accuracy").get<double>();
      e.eval_sequence_accuracy = optional_from(j.at("eval_sequence_accuracy"));
      e.eval_full_parse_accuracy = optional_from(j.at("eval_full_parse_accuracy"));
      e.seconds = j.at("seconds").get<double>();
      r.epochs.push_back(e);
    } catch (const json::exception& ex) {
      throw ParseError(line_no, ex.what());
    }
  }
  return r;
}

// ---- metrics ------------------------------------------------------------------

std::size_t train_split_size(std::size_t n, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidRatio(ratio);
  if (n < 2) return n;
  const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n - 1);
}

double sequence_accuracy(const std::vector<std::string>& predicted, const std::vector<std::string>& gold) {
  if (predicted.size() != gold.size()) throw LengthMismatch(predicted.size(), gold.size());
  if (gold.empty()) throw EmptyInput();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += predicted[i] == gold[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

CorpusMetrics corpus_metrics(
    const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>& pairs) {
  if (pairs.empty()) throw EmptyInput();
  double total = 0.0;
  std::size_t perfect = 0;
  for (const auto& [pred, gold] : pairs) {
    const double a = sequence_accuracy(pred, gold);
    total += a;
    if (a == 1.0) ++perfect;
  }
  const auto n = static_cast<double>(pairs.size());
  return {total / n, static_cast<double>(perfect) / n};
}

CorpusMetrics evaluate(const AddressParser& parser, const std::vector<DatasetRecord>& records,
                       std::size_t batch_size) {
  std::vector<std::string> addresses;
  for (const auto& r : records) addresses.push_back(r.address);
  const std::vector<ParsedAddress> parsed = parser.parse(addresses, ParseOptions{batch_size, 1});
  std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> pairs;
  for (std::size_t i = 0; i < records.size(); ++i) pairs.emplace_back(parsed[i].tags, records[i].gold_tags);
  return corpus_metrics(pairs);
}

// ---- training loop ------------------------------------------------------------

namespace {

double joint_norm(const nn::ParamSet<float>& a, const nn::ParamSet<float>* b) {
  double sq = 0.0;
  const auto add = [&](const nn::ParamSet<float>& ps) {
    for (const auto& p : ps.items()) {
      if (!p.trainable) continue;
      for (const float g : p.grad) sq += static_cast<double>(g) * static_cast<double>(g);
    }
  };
  add(a);
  if (b) add(*b);
  return std::sqrt(sq);
}

void scale_grads(nn::ParamSet<float>& ps, float factor) {
  for (auto& p : ps.items()) {
    for (float& g : p.grad) g *= factor;
  }
}

}  // namespace

RetrainResult retrain(const AddressParser& parser, const std::vector<DatasetRecord>& dataset,
                      const TrainingConfig& config) {
  config.validate();
  if (dataset.empty()) throw EmptyDataset();
  const TagVocabulary tags = config.prediction_tags ? *config.prediction_tags : parser.model().tags;
  for (const auto& r : dataset) validate_record(r, tags, parser.preprocessor());

  Rng rng(config.seed);
  AddressParser out = parser;
  TaggerModel& model = out.model();
  EmbeddingProvider& provider = out.provider();
  if (config.seq2seq_params) {
    const Seq2SeqConfig fresh = config.seq2seq_params->apply(parser.model().config);
    model = TaggerModel::create(fresh, tags, rng);
    if (provider.kind() == EmbeddingKind::subword) {
      SubwordComposer& comp = provider.composer();
      comp = SubwordComposer::create(comp.vocab_size, comp.config, rng);
    }
  } else if (config.prediction_tags) {
    model.reset_tag_layers(tags, rng);
  }

  std::vector<TokenizedAddress> prepared;
  std::vector<std::vector<int>> gold;
  for (const auto& r : dataset) {
    prepared.push_back(out.preprocessor().prepare(r.address));
    std::vector<int> ids;
    for (const auto& t : r.gold_tags) ids.push_back(static_cast<int>(tags.index_of(t)));
    gold.push_back(std::move(ids));
  }

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  const std::size_t n_train = train_split_size(dataset.size(), config.train_ratio);
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<DatasetRecord> eval_set;
  for (std::size_t i = n_train; i < order.size(); ++i) eval_set.push_back(dataset[order[i]]);

  const bool subword = provider.kind() == EmbeddingKind::subword;
  nn::OptimizerState<float> opt_tagger = nn::make_optimizer<float>(nn::Algorithm::adam, config.learning_rate);
  nn::OptimizerState<float> opt_composer = nn::make_optimizer<float>(nn::Algorithm::adam, config.learning_rate);

  TrainingReport report;
  report.train_size = n_train;
  report.eval_size = eval_set.size();
  double best_eval = -1.0;

  DecodeOptions options;
  options.teacher_forcing_ratio = config.teacher_forcing_ratio;
  options.rng = &rng;
  options.append_eos = config.train_with_eos;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    rng.shuffle(train_idx);
    double loss_sum = 0.0;
    double acc_sum = 0.0;
    std::size_t perfect = 0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < train_idx.size(); b += config.batch_size) {
      const std::size_t e = std::min(train_idx.size(), b + config.batch_size);
      std::vector<const TokenizedAddress*> batch;
      std::vector<std::vector<int>> batch_gold;
      for (std::size_t k = b; k < e; ++k) {
        batch.push_back(&prepared[train_idx[k]]);
        batch_gold.push_back(gold[train_idx[k]]);
      }
      nn::ParamSet<float>* composer_params = subword ? &provider.composer().params : nullptr;
      nn::Tape<float> tape(true);
      const DecodeGraph<float> fwd =
          training_forward(tape, provider, composer_params, model, model.params, batch, batch_gold, options);
      tape.backward(fwd.loss);
      model.params.zero_grad();
      tape.accumulate_into(model.params);
      if (composer_params) {
        composer_params->zero_grad();
        tape.accumulate_into(*composer_params);
      }
      if (config.clip_norm > 0.0) {
        const double norm = joint_norm(model.params, composer_params);
        if (norm > config.clip_norm) {
          const auto f = static_cast<float>(config.clip_norm / norm);
          scale_grads(model.params, f);
          if (composer_params) scale_grads(*composer_params, f);
        }
      }
      nn::optimizer_step(model.params, opt_tagger);
      if (composer_params) nn::optimizer_step(*composer_params, opt_composer);

      loss_sum += static_cast<double>(tape.scalar(fwd.loss));
      ++batches;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        std::size_t hits = 0;
        for (std::size_t s = 0; s < batch_gold[i].size(); ++s) {
          hits += static_cast<int>(fwd.tags[i][s]) == batch_gold[i][s] ? 1 : 0;
        }
        acc_sum += static_cast<double>(hits) / static_cast<double>(batch_gold[i].size());
        if (hits == batch_gold[i].size()) ++perfect;
      }
    }

    EpochReport row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
    row.train_sequence_accuracy = acc_sum / static_cast<double>(train_idx.size());
    row.train_full_parse_accuracy = static_cast<double>(perfect) / static_cast<double>(train_idx.size());
    if (!eval_set.empty()) {
      const CorpusMetrics m = evaluate(out, eval_set);
      row.eval_sequence_accuracy = m.mean_sequence_accuracy;
      row.eval_full_parse_accuracy = m.full_parse_accuracy;
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.epochs.push_back(row);

    const double score = row.eval_sequence_accuracy.value_or(row.train_sequence_accuracy);
    if (!config.checkpoint_path.empty() && score > best_eval) {
      best_eval = score;
      save_checkpoint(out, config.checkpoint_path);
    }
  }
  std::vector<std::size_t> eval_idx(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::vector<std::size_t> split_train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  return RetrainResult{std::move(out), std::move(report), std::move(split_train), std::move(eval_idx)};
}

}  // namespace addrtag
