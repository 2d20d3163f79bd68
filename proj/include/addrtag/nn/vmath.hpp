// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>

namespace addrtag::nn::vmath {

// Elementwise sigmoid and tanh over arrays. The float versions evaluate
// every element, tail included, through the same lane-parallel code, so an
// element's result depends only on its own value.

template <typename T>
inline T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
void sigmoid_n(const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = sigmoid(x[i]);
}

template <typename T>
void tanh_n(const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

namespace detail {

#if defined(__AVX512F__)
inline constexpr std::size_t kWidth = 16;
#else
inline constexpr std::size_t kWidth = 8;
#endif
typedef float vf __attribute__((vector_size(4 * kWidth)));
typedef std::int32_t vi __attribute__((vector_size(4 * kWidth)));

inline vf splat(float v) { return vf{} + v; }

inline vf vmin(vf a, vf b) { return a < b ? a : b; }
inline vf vmax(vf a, vf b) { return a > b ? a : b; }

/// Cephes-style expf: range reduction by ln 2, degree-6 polynomial, then
/// scaling by 2^n through the exponent bits. Max error about 2 ulp.
inline vf exp(vf x) {
  x = vmin(vmax(x, splat(-87.33654f)), splat(88.37626f));
  vf t = x * splat(1.44269504088896341f) + splat(0.5f);
  vi n = __builtin_convertvector(t, vi);
  vf fn = __builtin_convertvector(n, vf);
  const vi adjust = fn > t;
  n += adjust;
  fn = __builtin_convertvector(n, vf);
  x = x - fn * splat(0.693359375f);
  x = x - fn * splat(-2.12194440e-4f);
  vf p = splat(1.9875691500e-4f);
  p = p * x + splat(1.3981999507e-3f);
  p = p * x + splat(8.3334519073e-3f);
  p = p * x + splat(4.1665795894e-2f);
  p = p * x + splat(1.6666665459e-1f);
  p = p * x + splat(5.0000001201e-1f);
  p = p * (x * x) + x + splat(1.0f);
  // 2^n for n in [-126, 127]; the clamp keeps n+127 inside (0, 255).
  n = n + 127;
  n = n < 1 ? vi{} + 1 : n;
  const vi bits = n << 23;
  vf scale;
  std::memcpy(&scale, &bits, sizeof scale);
  return p * scale;
}

inline vf sigmoid(vf x) { return splat(1.0f) / (splat(1.0f) + exp(-x)); }

/// Odd rational approximation of tanh on [-7.9, 7.9]; saturates beyond.
inline vf tanh(vf x) {
  const vf lim = splat(7.90531110763549805f);
  const vf tiny = splat(0.0004f);
  const vf ax = vmax(x, -x);
  const vf c = vmin(vmax(x, -lim), lim);
  const vf x2 = c * c;
  vf p = splat(-2.76076847742355e-16f);
  p = x2 * p + splat(2.00018790482477e-13f);
  p = x2 * p + splat(-8.60467152213735e-11f);
  p = x2 * p + splat(5.12229709037114e-08f);
  p = x2 * p + splat(1.48572235717979e-05f);
  p = x2 * p + splat(6.37261928875436e-04f);
  p = x2 * p + splat(4.89352455891786e-03f);
  p = c * p;
  vf q = splat(1.19825839466702e-06f);
  q = x2 * q + splat(1.18534705686654e-04f);
  q = x2 * q + splat(2.26843463243900e-03f);
  q = x2 * q + splat(4.89352518554385e-03f);
  const vf r = p / q;
  return ax < tiny ? x : r;
}

template <typename F>
inline void apply(const float* x, float* y, std::size_t n, F f) {
  std::size_t i = 0;
  for (; i + kWidth <= n; i += kWidth) {
    vf v;
    std::memcpy(&v, x + i, sizeof v);
    v = f(v);
    std::memcpy(y + i, &v, sizeof v);
  }
  if (i < n) {
    float buf[kWidth] = {};
    std::memcpy(buf, x + i, (n - i) * sizeof(float));
    vf v;
    std::memcpy(&v, buf, sizeof v);
    v = f(v);
    std::memcpy(buf, &v, sizeof v);
    std::memcpy(y + i, buf, (n - i) * sizeof(float));
  }
}

}  // namespace detail

template <>
inline void sigmoid_n<float>(const float* x, float* y, std::size_t n) {
  detail::apply(x, y, n, [](detail::vf v) { return detail::sigmoid(v); });
}

template <>
inline void tanh_n<float>(const float* x, float* y, std::size_t n) {
  detail::apply(x, y, n, [](detail::vf v) { return detail::tanh(v); });
}

}  // namespace addrtag::nn::vmath
