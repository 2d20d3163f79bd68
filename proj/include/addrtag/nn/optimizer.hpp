// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "addrtag/nn/tape.hpp"

namespace addrtag::nn {

enum class Algorithm { adam, sgd };

template <typename T>
struct OptimizerState {
  Algorithm algorithm = Algorithm::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global L2 gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
  long long step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

template <typename T>
OptimizerState<T> make_optimizer(Algorithm algorithm, double learning_rate) {
  OptimizerState<T> s;
  s.algorithm = algorithm;
  s.learning_rate = learning_rate;
  return s;
}

/// Updates every trainable parameter in place from its `grad` buffer. The
/// moment buffers are allocated on first use and must keep matching the
/// parameter shapes afterwards.
template <typename T>
void optimizer_step(ParamSet<T>& params, OptimizerState<T>& state) {
  auto& items = params.items();
  if (state.algorithm == Algorithm::adam) {
    if (state.first_moment.empty() && state.step == 0) {
      for (const auto& p : items) {
        state.first_moment.emplace_back(p.value.size(), T(0));
        state.second_moment.emplace_back(p.value.size(), T(0));
      }
    }
    if (state.first_moment.size() != items.size() || state.second_moment.size() != items.size()) {
      throw ShapeMismatch("optimizer state does not match the parameter set");
    }
    for (std::size_t k = 0; k < items.size(); ++k) {
      if (state.first_moment[k].size() != items[k].value.size() ||
          state.second_moment[k].size() != items[k].value.size()) {
        throw ShapeMismatch("optimizer buffer shape mismatch for " + items[k].name);
      }
    }
  }
  for (const auto& p : items) {
    if (p.grad.size() != p.value.size()) throw ShapeMismatch("gradient shape mismatch for " + p.name);
  }

  double scale = 1.0;
  if (state.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& p : items) {
      if (!p.trainable) continue;
      for (const T g : p.grad) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (norm > state.clip_norm) scale = state.clip_norm / norm;
  }

  ++state.step;
  const T lr = static_cast<T>(state.learning_rate);
  if (state.algorithm == Algorithm::sgd) {
    for (auto& p : items) {
      if (!p.trainable) continue;
      for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= lr * static_cast<T>(scale) * p.grad[i];
    }
    return;
  }
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  const T eps = static_cast<T>(state.epsilon);
  const T c1 = static_cast<T>(1.0 - std::pow(state.beta1, static_cast<double>(state.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(state.beta2, static_cast<double>(state.step)));
  for (std::size_t k = 0; k < items.size(); ++k) {
    auto& p = items[k];
    if (!p.trainable) continue;
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T g = p.grad[i] * static_cast<T>(scale);
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const T m_hat = m[i] / c1;
      const T v_hat = v[i] / c2;
      p.value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

}  // namespace addrtag::nn
