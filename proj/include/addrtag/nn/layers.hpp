// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "addrtag/nn/tape.hpp"
#include "addrtag/random.hpp"

namespace addrtag::nn {

// ---- value-level helpers ---------------------------------------------------

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  if (logits.empty()) throw ShapeMismatch("softmax of an empty vector");
  std::vector<T> out(logits.size());
  softmax_row(logits.data(), logits.size(), out.data());
  return out;
}

template <typename T>
T cross_entropy(std::span<const T> probs, std::size_t target) {
  if (target >= probs.size()) throw IndexOutOfRange("cross_entropy target " + std::to_string(target));
  return -std::log(std::max(probs[target], static_cast<T>(kProbFloor)));
}

/// Index of the largest entry; ties go to the lowest index. Entries whose
/// index equals `excluded` are skipped.
template <typename T>
std::size_t argmax(const T* v, std::size_t n, std::size_t excluded = static_cast<std::size_t>(-1)) {
  std::size_t best = n;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == excluded) continue;
    if (best == n || v[j] > v[best]) best = j;
  }
  return best;
}

// ---- initialisation --------------------------------------------------------

template <typename T>
void fill_uniform(Parameter<T>& p, Rng& rng, double bound) {
  for (auto& x : p.value) x = static_cast<T>(rng.uniform(-bound, bound));
}

/// Fused LSTM weights, gate blocks ordered i, f, g, o along the columns:
/// `<prefix>.W` [in x 4h], `<prefix>.U` [h x 4h], `<prefix>.b` [1 x 4h].
template <typename T>
void add_lstm(ParamSet<T>& params, const std::string& prefix, std::size_t input, std::size_t hidden, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  fill_uniform(params.add(prefix + ".W", input, 4 * hidden), rng, bound);
  fill_uniform(params.add(prefix + ".U", hidden, 4 * hidden), rng, bound);
  Parameter<T>& b = params.add(prefix + ".b", 1, 4 * hidden);
  for (std::size_t j = hidden; j < 2 * hidden; ++j) b.value[j] = T(1);
}

/// `<prefix>.W` [in x out] uniform(+-1/sqrt(in)), `<prefix>.b` [1 x out] zero.
template <typename T>
void add_linear(ParamSet<T>& params, const std::string& prefix, std::size_t input, std::size_t output, Rng& rng,
                bool bias = true) {
  fill_uniform(params.add(prefix + ".W", input, output), rng, 1.0 / std::sqrt(static_cast<double>(input)));
  if (bias) params.add(prefix + ".b", 1, output);
}

// ---- graph building blocks -------------------------------------------------

template <typename T>
struct LstmRefs {
  const Parameter<T>* W = nullptr;
  const Parameter<T>* U = nullptr;
  const Parameter<T>* b = nullptr;
  std::size_t input = 0;
  std::size_t hidden = 0;

  static LstmRefs from(const ParamSet<T>& params, const std::string& prefix) {
    LstmRefs r;
    r.W = &params.at(prefix + ".W");
    r.U = &params.at(prefix + ".U");
    r.b = &params.at(prefix + ".b");
    r.input = r.W->rows;
    r.hidden = r.U->rows;
    if (r.W->cols != 4 * r.hidden || r.U->cols != 4 * r.hidden || r.b->cols != 4 * r.hidden || r.b->rows != 1) {
      throw ShapeMismatch("inconsistent LSTM weights under " + prefix);
    }
    return r;
  }
};

struct LstmState {
  Var h;
  Var c;
};

/// One cell update from precomputed input gates (x W + b):
///   gates = gates_x + h U; i,f,o = sigmoid, g = tanh
///   c' = f*c + i*g;  h' = o*tanh(c')
template <typename T>
LstmState lstm_cell(Tape<T>& t, Var gates_x, LstmState prev, Var U, std::size_t hidden) {
  const Var gates = t.add(gates_x, t.matmul(prev.h, U));
  const Var i = t.sigmoid(t.slice_cols(gates, 0, hidden));
  const Var f = t.sigmoid(t.slice_cols(gates, hidden, hidden));
  const Var g = t.tanh(t.slice_cols(gates, 2 * hidden, hidden));
  const Var o = t.sigmoid(t.slice_cols(gates, 3 * hidden, hidden));
  const Var c = t.add(t.mul(f, prev.c), t.mul(i, g));
  const Var h = t.mul(o, t.tanh(c));
  return {h, c};
}

/// Full LSTM step for a batch of rows: x [B x in], h, c [B x hidden].
template <typename T>
LstmState lstm_step(Tape<T>& t, Var x, LstmState prev, const LstmRefs<T>& w) {
  if (t.cols(x) != w.input) {
    throw ShapeMismatch("lstm_step: input width " + std::to_string(t.cols(x)) + ", expected " +
                        std::to_string(w.input));
  }
  if (t.cols(prev.h) != w.hidden || t.cols(prev.c) != w.hidden || t.rows(prev.h) != t.rows(x) ||
      t.rows(prev.c) != t.rows(x)) {
    throw ShapeMismatch("lstm_step: state shape");
  }
  const Var gates_x = t.add_row(t.matmul(x, t.param(*w.W)), t.param(*w.b));
  return lstm_cell(t, gates_x, prev, t.param(*w.U), w.hidden);
}

/// Value-level convenience wrapper around lstm_step for a single row.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> lstm_step(std::span<const T> x, std::span<const T> h, std::span<const T> c,
                                                     const LstmRefs<T>& w) {
  Tape<T> t(false);
  const Var xv = t.constant(1, x.size(), std::vector<T>(x.begin(), x.end()));
  const Var hv = t.constant(1, h.size(), std::vector<T>(h.begin(), h.end()));
  const Var cv = t.constant(1, c.size(), std::vector<T>(c.begin(), c.end()));
  const LstmState next = lstm_step(t, xv, {hv, cv}, w);
  return {t.values(next.h), t.values(next.c)};
}

template <typename T>
Var linear(Tape<T>& t, Var x, const ParamSet<T>& params, const std::string& prefix) {
  Var y = t.matmul(x, t.param(params.at(prefix + ".W")));
  if (params.contains(prefix + ".b")) y = t.add_row(y, t.param(params.at(prefix + ".b")));
  return y;
}

// ---- gradient oracle -------------------------------------------------------

/// Compares backward() against central finite differences over every
/// coordinate of every trainable parameter. Returns
///   max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// `loss_fn` must rebuild the loss from the current parameter values.
template <typename T>
double grad_check(const std::function<Var(Tape<T>&)>& loss_fn, ParamSet<T>& params, T eps) {
  std::vector<std::vector<T>> analytic;
  {
    Tape<T> tape(true);
    const Var loss = loss_fn(tape);
    tape.backward(loss);
    for (const auto& p : params.items()) analytic.push_back(tape.param_grad(p));
  }
  const auto eval = [&]() {
    Tape<T> tape(false);
    return static_cast<double>(tape.scalar(loss_fn(tape)));
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < params.items().size(); ++k) {
    Parameter<T>& p = params.items()[k];
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T saved = p.value[i];
      p.value[i] = saved + eps;
      const double up = eval();
      p.value[i] = saved - eps;
      const double down = eval();
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * static_cast<double>(eps));
      const double a = static_cast<double>(analytic[k][i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace addrtag::nn
