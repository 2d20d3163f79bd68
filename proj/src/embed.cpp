// SPDX-License-Identifier: Apache-2.0
#include "addrtag/embed.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "addrtag/nn/layers.hpp"
#include "addrtag/text.hpp"

namespace addrtag {

// ---- VectorTable -----------------------------------------------------------

VectorTable::VectorTable(std::size_t dim, std::uint64_t oov_seed) : dim_(dim), oov_seed_(oov_seed) {
  if (dim == 0) throw InvalidConfig("vector table dimension must be >= 1");
}

void VectorTable::add(const std::string& word, std::span<const float> vector) {
  if (vector.size() != dim_) throw ShapeMismatch("vector for '" + word + "' has the wrong width");
  if (word.empty()) throw InvalidConfig("empty word in vector table");
  if (!index_.emplace(word, words_.size()).second) throw InvalidConfig("duplicate word in vector table: " + word);
  words_.push_back(word);
  data_.insert(data_.end(), vector.begin(), vector.end());
}

namespace {

bool parse_float(std::string_view s, float& out) {
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, out);
  return res.ec == std::errc() && res.ptr == end;
}

bool parse_size(std::string_view s, std::size_t& out) {
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, out);
  return res.ec == std::errc() && res.ptr == end;
}

}  // namespace

VectorTable VectorTable::load(const std::filesystem::path& path, std::uint64_t oov_seed) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  std::unique_ptr<VectorTable> table;
  std::vector<float> row;
  while (std::getline(in, line)) {
    ++line_no;
    const std::vector<std::string> fields = text::split_whitespace(line);
    if (fields.empty()) continue;
    if (line_no == 1 && fields.size() == 2) {
      std::size_t count = 0;
      if (parse_size(fields[0], count) && parse_size(fields[1], dim)) continue;
      dim = 0;
    }
    if (fields.size() < 2) throw ParseError(line_no, "expected a word followed by its vector");
    if (!table) {
      if (dim == 0) dim = fields.size() - 1;
      table = std::make_unique<VectorTable>(dim, oov_seed);
    }
    if (fields.size() - 1 != dim) {
      throw ParseError(line_no, "expected " + std::to_string(dim) + " values, got " + std::to_string(fields.size() - 1));
    }
    row.resize(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      if (!parse_float(fields[j + 1], row[j])) throw ParseError(line_no, "bad number '" + fields[j + 1] + "'");
    }
    try {
      table->add(fields[0], row);
    } catch (const InvalidConfig& e) {
      throw ParseError(line_no, e.what());
    }
  }
  if (!table) throw ParseError(line_no, "vector table has no rows");
  return std::move(*table);
}

void VectorTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << words_.size() << ' ' << dim_ << '\n';
  char buf[32];
  for (std::size_t w = 0; w < words_.size(); ++w) {
    out << words_[w];
    for (std::size_t j = 0; j < dim_; ++j) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), data_[w * dim_ + j]);
      out << ' ' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

bool VectorTable::contains(std::string_view word) const { return index_.count(std::string(word)) != 0; }

void VectorTable::lookup_into(std::string_view token, float* out) const {
  const auto it = index_.find(std::string(token));
  if (it != index_.end()) {
    const float* src = data_.data() + it->second * dim_;
    std::copy(src, src + dim_, out);
    return;
  }
  Rng rng(mix64(oov_seed_ ^ mix64(fnv1a(token))));
  std::vector<double> v(dim_);
  double norm = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (std::size_t j = 0; j < dim_; ++j) out[j] = static_cast<float>(v[j] / norm);
}

std::vector<float> VectorTable::lookup(std::string_view token) const {
  std::vector<float> out(dim_);
  lookup_into(token, out.data());
  return out;
}

// ---- SubwordComposer -------------------------------------------------------

SubwordComposer SubwordComposer::create(std::size_t vocab_size, const ComposerConfig& config, Rng& rng) {
  if (vocab_size == 0 || config.subword_embedding_size == 0 || config.hidden_size == 0 || config.output_size == 0) {
    throw InvalidConfig("composer sizes must be >= 1");
  }
  SubwordComposer c;
  c.config = config;
  c.vocab_size = vocab_size;
  nn::fill_uniform(c.params.add(composer_names::kEmbeddings, vocab_size, config.subword_embedding_size), rng,
                   1.0 / std::sqrt(static_cast<double>(config.subword_embedding_size)));
  nn::add_lstm(c.params, composer_names::kForward, config.subword_embedding_size, config.hidden_size, rng);
  nn::add_lstm(c.params, composer_names::kBackward, config.subword_embedding_size, config.hidden_size, rng);
  nn::add_linear(c.params, composer_names::kProjection, 2 * config.hidden_size, config.output_size, rng);
  return c;
}

template <typename T>
nn::Var compose_graph(nn::Tape<T>& t, const nn::ParamSet<T>& params, const std::vector<std::vector<int>>& words) {
  const nn::Parameter<T>& table = params.at(composer_names::kEmbeddings);
  const auto fwd = nn::LstmRefs<T>::from(params, composer_names::kForward);
  const auto bwd = nn::LstmRefs<T>::from(params, composer_names::kBackward);
  if (fwd.input != table.cols || bwd.input != table.cols || fwd.hidden != bwd.hidden) {
    throw ShapeMismatch("composer weights are inconsistent");
  }
  const std::size_t count = words.size();
  std::size_t steps = 0;
  for (const auto& w : words) {
    if (w.empty()) throw InvalidConfig("compose: empty subword sequence");
    steps = std::max(steps, w.size());
  }

  // Words are processed longest first, so the words still running at step s
  // are a prefix and only that prefix is advanced.
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return words[a].size() > words[b].size(); });
  std::vector<std::size_t> active(steps, 0);
  for (const auto& w : words) {
    for (std::size_t s = 0; s < w.size(); ++s) ++active[s];
  }
  // Packed time-major ids: step s occupies rows offset[s] .. offset[s] + active[s].
  std::vector<std::size_t> offset(steps, 0);
  for (std::size_t s = 1; s < steps; ++s) offset[s] = offset[s - 1] + active[s - 1];
  std::vector<int> ids;
  ids.reserve(offset.back() + active.back());
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t r = 0; r < active[s]; ++r) {
      const int id = words[order[r]][s];
      if (id < 0 || static_cast<std::size_t>(id) >= table.rows) {
        throw IndexOutOfRange("subword id " + std::to_string(id) + " outside the composer vocabulary");
      }
      ids.push_back(id);
    }
  }
  const nn::Var x = t.gather_rows(t.param(table), std::move(ids));
  const nn::Var gx_f = t.add_row(t.matmul(x, t.param(*fwd.W)), t.param(*fwd.b));
  const nn::Var gx_b = t.add_row(t.matmul(x, t.param(*bwd.W)), t.param(*bwd.b));
  const nn::Var u_f = t.param(*fwd.U);
  const nn::Var u_b = t.param(*bwd.U);

  const std::size_t hidden = fwd.hidden;
  const auto advance = [&](nn::LstmState state, nn::Var gx, nn::Var U, std::size_t s) {
    const std::size_t n = active[s];
    const nn::Var gates_x = t.slice_rows(gx, offset[s], n);
    if (n == count) return nn::lstm_cell(t, gates_x, state, U, hidden);
    const nn::LstmState next =
        nn::lstm_cell(t, gates_x, {t.slice_rows(state.h, 0, n), t.slice_rows(state.c, 0, n)}, U, hidden);
    return nn::LstmState{t.concat_rows({next.h, t.slice_rows(state.h, n, count - n)}),
                         t.concat_rows({next.c, t.slice_rows(state.c, n, count - n)})};
  };

  nn::LstmState forward{t.zeros(count, hidden), t.zeros(count, hidden)};
  for (std::size_t s = 0; s < steps; ++s) forward = advance(forward, gx_f, u_f, s);
  // The reverse direction starts from a zero state at each word's own last
  // subword.
  nn::LstmState backward{t.zeros(count, hidden), t.zeros(count, hidden)};
  for (std::size_t s = steps; s-- > 0;) backward = advance(backward, gx_b, u_b, s);

  const nn::Var sorted = nn::linear(t, t.concat_cols(forward.h, backward.h), params, composer_names::kProjection);
  std::vector<int> back(count);
  for (std::size_t r = 0; r < count; ++r) back[order[r]] = static_cast<int>(r);
  return t.gather_rows(sorted, std::move(back));
}

template nn::Var compose_graph<float>(nn::Tape<float>&, const nn::ParamSet<float>&,
                                      const std::vector<std::vector<int>>&);
template nn::Var compose_graph<double>(nn::Tape<double>&, const nn::ParamSet<double>&,
                                       const std::vector<std::vector<int>>&);

std::vector<float> compose(const SubwordComposer& composer, const std::vector<int>& subword_ids) {
  nn::Tape<float> t(false);
  return t.values(compose_graph(t, composer.params, {subword_ids}));
}

// ---- EmbeddingProvider -----------------------------------------------------

EmbeddingProvider EmbeddingProvider::from_table(std::shared_ptr<const VectorTable> table) {
  if (!table) throw InvalidConfig("null vector table");
  EmbeddingProvider p;
  p.kind_ = EmbeddingKind::vector_table;
  p.table_ = std::move(table);
  return p;
}

EmbeddingProvider EmbeddingProvider::from_subwords(std::shared_ptr<const MergeTable> merges,
                                                   SubwordComposer composer) {
  if (!merges) throw InvalidConfig("null merge table");
  if (composer.vocab_size != merges->vocab_size()) {
    throw InvalidConfig("composer vocabulary (" + std::to_string(composer.vocab_size) +
                        ") does not match the merge table (" + std::to_string(merges->vocab_size()) + ")");
  }
  EmbeddingProvider p;
  p.kind_ = EmbeddingKind::subword;
  p.merges_ = std::move(merges);
  p.composer_ = std::move(composer);
  return p;
}

std::size_t EmbeddingProvider::width() const {
  return kind_ == EmbeddingKind::vector_table ? table_->dim() : composer_.config.output_size;
}

std::vector<int> EmbeddingProvider::subwords(std::string_view token) const {
  return segment(digits_to_zero(token), *merges_);
}

template <typename T>
nn::Var embed_batch(nn::Tape<T>& t, const EmbeddingProvider& provider, const nn::ParamSet<T>* composer_params,
                    const std::vector<const TokenizedAddress*>& batch, std::size_t steps) {
  const std::size_t count = batch.size();
  const std::size_t width = provider.width();
  if (provider.kind() == EmbeddingKind::vector_table) {
    std::vector<T> values(steps * count * width, T(0));
    std::vector<float> row(width);
    for (std::size_t i = 0; i < count; ++i) {
      const auto& tokens = batch[i]->tokens;
      for (std::size_t s = 0; s < tokens.size() && s < steps; ++s) {
        provider.table().lookup_into(tokens[s], row.data());
        std::copy(row.begin(), row.end(), values.begin() + static_cast<std::ptrdiff_t>((s * count + i) * width));
      }
    }
    return t.constant(steps * count, width, std::move(values));
  }

  if (composer_params == nullptr) throw InvalidConfig("subword embedding needs composer parameters");
  // Each distinct token is composed once per batch.
  std::unordered_map<std::string, int> unique;
  std::vector<std::vector<int>> words;
  std::vector<int> rows(steps * count, -1);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& tokens = batch[i]->tokens;
    for (std::size_t s = 0; s < tokens.size() && s < steps; ++s) {
      auto [it, inserted] = unique.emplace(tokens[s], static_cast<int>(words.size()));
      if (inserted) words.push_back(provider.subwords(tokens[s]));
      rows[s * count + i] = it->second;
    }
  }
  if (words.empty()) return t.zeros(steps * count, width);
  const nn::Var composed = compose_graph(t, *composer_params, words);
  return t.gather_rows(composed, std::move(rows));
}

template nn::Var embed_batch<float>(nn::Tape<float>&, const EmbeddingProvider&, const nn::ParamSet<float>*,
                                    const std::vector<const TokenizedAddress*>&, std::size_t);
template nn::Var embed_batch<double>(nn::Tape<double>&, const EmbeddingProvider&, const nn::ParamSet<double>*,
                                     const std::vector<const TokenizedAddress*>&, std::size_t);

Matrix embed_address(const EmbeddingProvider& provider, const TokenizedAddress& address) {
  nn::Tape<float> t(false);
  const std::vector<const TokenizedAddress*> batch{&address};
  const nn::Var v = embed_batch(t, provider, &provider.composer().params, batch, address.tokens.size());
  return Matrix(t.rows(v), t.cols(v), t.values(v));
}

}  // namespace addrtag
