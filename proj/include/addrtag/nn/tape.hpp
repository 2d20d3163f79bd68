// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "addrtag/error.hpp"
#include "addrtag/nn/kernels.hpp"
#include "addrtag/nn/vmath.hpp"

namespace addrtag::nn {

namespace detail {

/// Default-initialises on resize, so float buffers that are about to be
/// overwritten skip the zero fill.
template <typename T>
struct UninitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = UninitAllocator<U>;
  };
  UninitAllocator() = default;
  template <typename U>
  UninitAllocator(const UninitAllocator<U>&) noexcept {}
  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

}  // namespace detail

/// A named 2-D weight array with its gradient buffer.
template <typename T>
struct Parameter {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> value;
  std::vector<T> grad;
  bool trainable = true;

  std::size_t size() const { return rows * cols; }
};

/// Insertion-ordered parameter collection. The order is part of the
/// checkpoint layout, so it must not depend on anything but construction.
template <typename T>
class ParamSet {
 public:
  Parameter<T>& add(std::string name, std::size_t rows, std::size_t cols, bool trainable = true) {
    if (index_.count(name)) throw InvalidConfig("duplicate parameter: " + name);
    index_.emplace(name, items_.size());
    Parameter<T> p;
    p.name = std::move(name);
    p.rows = rows;
    p.cols = cols;
    p.value.assign(rows * cols, T(0));
    p.grad.assign(rows * cols, T(0));
    p.trainable = trainable;
    items_.push_back(std::move(p));
    return items_.back();
  }

  /// Changes a parameter's shape in place (zero-filled), keeping its position.
  Parameter<T>& reshape(const std::string& name, std::size_t rows, std::size_t cols) {
    Parameter<T>& p = at(name);
    p.rows = rows;
    p.cols = cols;
    p.value.assign(rows * cols, T(0));
    p.grad.assign(rows * cols, T(0));
    return p;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter<T>& at(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) throw InvalidConfig("missing parameter: " + name);
    return items_[it->second];
  }
  const Parameter<T>& at(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw InvalidConfig("missing parameter: " + name);
    return items_[it->second];
  }

  std::vector<Parameter<T>>& items() { return items_; }
  const std::vector<Parameter<T>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

  void zero_grad() {
    for (auto& p : items_) std::fill(p.grad.begin(), p.grad.end(), T(0));
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& p : items_) {
      Parameter<U>& q = out.add(p.name, p.rows, p.cols, p.trainable);
      for (std::size_t i = 0; i < p.value.size(); ++i) q.value[i] = static_cast<U>(p.value[i]);
    }
    return out;
  }

 private:
  std::vector<Parameter<T>> items_;
  std::map<std::string, std::size_t> index_;
};

/// Handle to a node on a Tape.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const { return id != std::numeric_limits<std::uint32_t>::max(); }
};

/// Numerically stable softmax of one row, written to `out`.
template <typename T>
void softmax_row(const T* in, std::size_t n, T* out) {
  T m = in[0];
  for (std::size_t j = 1; j < n; ++j) m = std::max(m, in[j]);
  T sum = T(0);
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(in[j] - m);
    sum += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= sum;
}

inline constexpr double kProbFloor = 1e-12;

/// Reverse-mode autodiff over 2-D row-major values.
///
/// Every op evaluates eagerly. When the tape is recording and at least one
/// input needs a gradient, the op also stores a closure that propagates the
/// output gradient to its inputs. A non-recording tape is a plain forward
/// evaluator with no bookkeeping beyond the node values.
///
/// Parameters enter through param(); their gradients stay on the tape until
/// accumulate_into() adds them to a ParamSet, so forward code can take
/// parameters by const reference.
template <typename T>
class Tape {
 public:
  using Buffer = std::vector<T, detail::UninitAllocator<T>>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(std::size_t rows, std::size_t cols, std::vector<T> data) {
    if (data.size() != rows * cols) throw ShapeMismatch("constant: data size does not match shape");
    return push(rows, cols, Buffer(data.begin(), data.end()), false, nullptr);
  }

  Var zeros(std::size_t rows, std::size_t cols) { return push(rows, cols, Buffer(rows * cols, T(0)), false, nullptr); }

  Var param(const Parameter<T>& p) {
    const auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return it->second;
    Node node;
    node.rows = p.rows;
    node.cols = p.cols;
    node.external = p.value.data();
    node.needs_grad = record_ && p.trainable;
    node.param = &p;
    nodes_.push_back(std::move(node));
    const Var v{static_cast<std::uint32_t>(nodes_.size() - 1)};
    param_nodes_.emplace(&p, v);
    return v;
  }

  std::size_t rows(Var v) const { return nodes_.at(v.id).rows; }
  std::size_t cols(Var v) const { return nodes_.at(v.id).cols; }
  const T* data(Var v) const { return nodes_.at(v.id).data(); }
  std::vector<T> values(Var v) const {
    const Node& n = nodes_.at(v.id);
    return std::vector<T>(n.data(), n.data() + n.rows * n.cols);
  }
  T scalar(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.rows * n.cols != 1) throw ShapeMismatch("scalar() on a non-scalar node");
    return n.data()[0];
  }
  /// Gradient of the last backward() target w.r.t. v; zeros if unreached.
  std::vector<T> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return std::vector<T>(n.rows * n.cols, T(0));
    return n.grad;
  }
  std::size_t node_count() const { return nodes_.size(); }

  // ---- ops -------------------------------------------------------------

  Var matmul(Var x, Var w) {
    const Node& a = nodes_[x.id];
    const Node& b = nodes_[w.id];
    if (a.cols != b.rows) {
      throw ShapeMismatch("matmul: " + shape_str(a) + " x " + shape_str(b));
    }
    Buffer out(a.rows * b.cols);
    kernels::matmul_set(a.data(), a.rows, a.cols, b.data(), b.cols, out.data());
    return push(a.rows, b.cols, std::move(out), needs(x) || needs(w), [x, w](Tape& t, std::uint32_t self) {
      const Node& s = t.nodes_[self];
      const Node& a = t.nodes_[x.id];
      const Node& b = t.nodes_[w.id];
      if (a.needs_grad) {
        const std::vector<T> wt = kernels::transpose(b.data(), b.rows, b.cols);
        kernels::matmul_acc(s.grad.data(), s.rows, s.cols, wt.data(), b.rows, t.gbuf(x));
      }
      if (b.needs_grad) {
        const std::vector<T> xt = kernels::transpose(a.data(), a.rows, a.cols);
        kernels::matmul_acc(xt.data(), a.cols, a.rows, s.grad.data(), s.cols, t.gbuf(w));
      }
    });
  }

  Var add(Var x, Var y) {
    const Node& a = nodes_[x.id];
    const Node& b = nodes_[y.id];
    same_shape(a, b, "add");
    Buffer out(a.rows * a.cols);
    const T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
    return push(a.rows, a.cols, std::move(out), needs(x) || needs(y), [x, y](Tape& t, std::uint32_t self) {
      const std::vector<T>& g = t.nodes_[self].grad;
      if (t.needs(x)) axpy(g, t.gbuf(x));
      if (t.needs(y)) axpy(g, t.gbuf(y));
    });
  }

  Var mul(Var x, Var y) {
    const Node& a = nodes_[x.id];
    const Node& b = nodes_[y.id];
    same_shape(a, b, "mul");
    Buffer out(a.rows * a.cols);
    const T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
    return push(a.rows, a.cols, std::move(out), needs(x) || needs(y), [x, y](Tape& t, std::uint32_t self) {
      const std::vector<T>& g = t.nodes_[self].grad;
      const T* pa = t.nodes_[x.id].data();
      const T* pb = t.nodes_[y.id].data();
      if (t.needs(x)) {
        T* gx = t.gbuf(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * pb[i];
      }
      if (t.needs(y)) {
        T* gy = t.gbuf(y);
        for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * pa[i];
      }
    });
  }

  /// a[r x c] + bias[1 x c] broadcast over rows.
  Var add_row(Var x, Var bias) {
    const Node& a = nodes_[x.id];
    const Node& b = nodes_[bias.id];
    if (b.rows != 1 || b.cols != a.cols) throw ShapeMismatch("add_row: " + shape_str(a) + " + " + shape_str(b));
    Buffer out(a.rows * a.cols);
    const T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t r = 0; r < a.rows; ++r) {
      for (std::size_t c = 0; c < a.cols; ++c) out[r * a.cols + c] = pa[r * a.cols + c] + pb[c];
    }
    return push(a.rows, a.cols, std::move(out), needs(x) || needs(bias), [x, bias](Tape& t, std::uint32_t self) {
      const Node& s = t.nodes_[self];
      if (t.needs(x)) axpy(s.grad, t.gbuf(x));
      if (t.needs(bias)) {
        T* gb = t.gbuf(bias);
        for (std::size_t r = 0; r < s.rows; ++r) {
          for (std::size_t c = 0; c < s.cols; ++c) gb[c] += s.grad[r * s.cols + c];
        }
      }
    });
  }

  Var scale(Var x, T factor) {
    const Node& a = nodes_[x.id];
    Buffer out(a.rows * a.cols);
    const T* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * factor;
    return push(a.rows, a.cols, std::move(out), needs(x), [x, factor](Tape& t, std::uint32_t self) {
      const std::vector<T>& g = t.nodes_[self].grad;
      T* gx = t.gbuf(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
    });
  }

  Var sigmoid(Var x) {
    const Node& a = nodes_[x.id];
    Buffer out(a.rows * a.cols);
    const T* pa = a.data();
    vmath::sigmoid_n(pa, out.data(), out.size());
    return push(a.rows, a.cols, std::move(out), needs(x), [x](Tape& t, std::uint32_t self) {
      const Node& s = t.nodes_[self];
      const T* y = s.data();
      T* gx = t.gbuf(x);
      for (std::size_t i = 0; i < s.grad.size(); ++i) gx[i] += s.grad[i] * y[i] * (T(1) - y[i]);
    });
  }

  Var tanh(Var x) {
    const Node& a = nodes_[x.id];
    Buffer out(a.rows * a.cols);
    const T* pa = a.data();
    vmath::tanh_n(pa, out.data(), out.size());
    return push(a.rows, a.cols, std::move(out), needs(x), [x](Tape& t, std::uint32_t self) {
      const Node& s = t.nodes_[self];
      const T* y = s.data();
      T* gx = t.gbuf(x);
      for (std::size_t i = 0; i < s.grad.size(); ++i) gx[i] += s.grad[i] * (T(1) - y[i] * y[i]);
    });
  }

  Var sum(Var x) {
    const Node& a = nodes_[x.id];
    T total = T(0);
    const T* pa = a.data();
    for (std::size_t i = 0; i < a.rows * a.cols; ++i) total += pa[i];
    return push(1, 1, {total}, needs(x), [x](Tape& t, std::uint32_t self) {
      const T g = t.nodes_[self].grad[0];
      const Node& a = t.nodes_[x.id];
      T* gx = t.gbuf(x);
      for (std::size_t i = 0; i < a.rows * a.cols; ++i) gx[i] += g;
    });
  }

  Var slice_cols(Var x, std::size_t begin, std::size_t count) {
    const Node& a = nodes_[x.id];
    if (begin + count > a.cols) throw ShapeMismatch("slice_cols out of range");
    Buffer out(a.rows * count);
    const T* pa = a.data();
    for (std::size_t r = 0; r < a.rows; ++r) {
      for (std::size_t c = 0; c < count; ++c) out[r * count + c] = pa[r * a.cols + begin + c];
    }
    return push(a.rows, count, std::move(out), needs(x), [x, begin, count](Tape& t, std::uint32_t self) {
      const Node& s = t.nodes_[self];
      const std::size_t width = t.nodes_[x.id].cols;
      T* gx = t.gbuf(x);
      for (std::size_t r = 0; r < s.rows; ++r) {
        for (std::size_t c = 0; c < count; ++c) gx[r * width + begin + c] += s.grad[r * count + c];
      }
    });
  }

  Var slice_rows(Var x, std::size_t begin, std::size_t count) {
    const Node& a = nodes_[x.id];
    if (begin + count > a.rows) throw ShapeMismatch("slice_rows out of range");
    const T* pa = a.data() + begin * a.cols;
    Buffer out(pa, pa + count * a.cols);
    return push(count, a.cols, std::move(out), needs(x), [x, begin](Tape& t, std::uint32_t self) {
      const Node& s = t.nodes_[self];
      T* gx = t.gbuf(x) + begin * s.cols;
      for (std::size_t i = 0; i < s.grad.size(); ++i) gx[i] += s.grad[i];
    });
  }

  Var concat_cols(Var x, Var y) {
    const Node& a = nodes_[x.id];
    const Node& b = nodes_[y.id];
    if (a.rows != b.rows) throw ShapeMismatch("concat_cols: " + shape_str(a) + " | " + shape_str(b));
    const std::size_t width = a.cols + b.cols;
    Buffer out(a.rows * width);
    const T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t r = 0; r < a.rows; ++r) {
      std::copy(pa + r * a.cols, pa + (r + 1) * a.cols, out.begin() + static_cast<std::ptrdiff_t>(r * width));
      std::copy(pb + r * b.cols, pb + (r + 1) * b.cols,
                out.begin() + static_cast<std::ptrdiff_t>(r * width + a.cols));
    }
    return push(a.rows, width, std::move(out), needs(x) || needs(y), [x, y](Tape& t, std::uint32_t self) {
      const Node& s = t.nodes_[self];
      const std::size_t ac = t.nodes_[x.id].cols;
      const std::size_t bc = t.nodes_[y.id].cols;
      if (t.needs(x)) {
        T* gx = t.gbuf(x);
        for (std::size_t r = 0; r < s.rows; ++r) {
          for (std::size_t c = 0; c < ac; ++c) gx[r * ac + c] += s.grad[r * s.cols + c];
        }
      }
      if (t.needs(y)) {
        T* gy = t.gbuf(y);
        for (std::size_t r = 0; r < s.rows; ++r) {
          for (std::size_t c = 0; c < bc; ++c) gy[r * bc + c] += s.grad[r * s.cols + ac + c];
        }
      }
    });
  }

  /// out[r] = table[ids[r]]; a negative id yields a zero row.
  Var gather_rows(Var table, std::vector<int> ids) {
    const Node& a = nodes_[table.id];
    Buffer out(ids.size() * a.cols, T(0));
    const T* pa = a.data();
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (ids[r] < 0) continue;
      if (static_cast<std::size_t>(ids[r]) >= a.rows) {
        throw IndexOutOfRange("gather_rows: id " + std::to_string(ids[r]) + " >= " + std::to_string(a.rows));
      }
      std::copy(pa + static_cast<std::size_t>(ids[r]) * a.cols, pa + (static_cast<std::size_t>(ids[r]) + 1) * a.cols,
                out.begin() + static_cast<std::ptrdiff_t>(r * a.cols));
    }
    const std::size_t n = ids.size();
    return push(n, a.cols, std::move(out), needs(table), [table, ids = std::move(ids)](Tape& t, std::uint32_t self) {
      const Node& s = t.nodes_[self];
      T* gt = t.gbuf(table);
      for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0) continue;
        T* dst = gt + static_cast<std::size_t>(ids[r]) * s.cols;
        for (std::size_t c = 0; c < s.cols; ++c) dst[c] += s.grad[r * s.cols + c];
      }
    });
  }

  /// Stacks same-width nodes vertically.
  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_rows of nothing");
    const std::size_t width = nodes_[parts[0].id].cols;
    std::size_t total = 0;
    bool any_grad = false;
    for (const Var p : parts) {
      if (nodes_[p.id].cols != width) throw ShapeMismatch("concat_rows: column mismatch");
      total += nodes_[p.id].rows;
      any_grad = any_grad || needs(p);
    }
    Buffer out;
    out.reserve(total * width);
    for (const Var p : parts) {
      const Node& n = nodes_[p.id];
      out.insert(out.end(), n.data(), n.data() + n.rows * n.cols);
    }
    return push(total, width, std::move(out), any_grad, [parts](Tape& t, std::uint32_t self) {
      const Node& s = t.nodes_[self];
      std::size_t offset = 0;
      for (const Var p : parts) {
        const std::size_t count = t.nodes_[p.id].rows * s.cols;
        if (t.needs(p)) {
          T* g = t.gbuf(p);
          for (std::size_t i = 0; i < count; ++i) g[i] += s.grad[offset + i];
        }
        offset += count;
      }
    });
  }

  /// Row r comes from `fresh` where keep[r] != 0, otherwise from `old`.
  Var blend_rows(Var fresh, Var old, std::vector<std::uint8_t> keep) {
    const Node& a = nodes_[fresh.id];
    const Node& b = nodes_[old.id];
    same_shape(a, b, "blend_rows");
    if (keep.size() != a.rows) throw ShapeMismatch("blend_rows: mask length");
    Buffer out(a.rows * a.cols);
    for (std::size_t r = 0; r < a.rows; ++r) {
      const T* src = (keep[r] ? a.data() : b.data()) + r * a.cols;
      std::copy(src, src + a.cols, out.begin() + static_cast<std::ptrdiff_t>(r * a.cols));
    }
    return push(a.rows, a.cols, std::move(out), needs(fresh) || needs(old),
                [fresh, old, keep = std::move(keep)](Tape& t, std::uint32_t self) {
                  const Node& s = t.nodes_[self];
                  const bool nf = t.needs(fresh);
                  const bool no = t.needs(old);
                  T* gf = nf ? t.gbuf(fresh) : nullptr;
                  T* go = no ? t.gbuf(old) : nullptr;
                  for (std::size_t r = 0; r < s.rows; ++r) {
                    T* dst = keep[r] ? gf : go;
                    if (dst == nullptr) continue;
                    for (std::size_t c = 0; c < s.cols; ++c) dst[r * s.cols + c] += s.grad[r * s.cols + c];
                  }
                });
  }

  /// Zeroes rows where keep[r] == 0.
  Var mask_rows(Var x, std::vector<std::uint8_t> keep) {
    const Node& a = nodes_[x.id];
    if (keep.size() != a.rows) throw ShapeMismatch("mask_rows: mask length");
    Buffer out(a.rows * a.cols, T(0));
    for (std::size_t r = 0; r < a.rows; ++r) {
      if (!keep[r]) continue;
      std::copy(a.data() + r * a.cols, a.data() + (r + 1) * a.cols,
                out.begin() + static_cast<std::ptrdiff_t>(r * a.cols));
    }
    return push(a.rows, a.cols, std::move(out), needs(x), [x, keep = std::move(keep)](Tape& t, std::uint32_t self) {
      const Node& s = t.nodes_[self];
      T* gx = t.gbuf(x);
      for (std::size_t r = 0; r < s.rows; ++r) {
        if (!keep[r]) continue;
        for (std::size_t c = 0; c < s.cols; ++c) gx[r * s.cols + c] += s.grad[r * s.cols + c];
      }
    });
  }

  /// big[(n*B) x c] + small[B x c] tiled n times (row r gets small[r % B]).
  Var add_tiled_rows(Var big, Var small) {
    const Node& a = nodes_[big.id];
    const Node& b = nodes_[small.id];
    if (a.cols != b.cols || b.rows == 0 || a.rows % b.rows != 0) {
      throw ShapeMismatch("add_tiled_rows: " + shape_str(a) + " + " + shape_str(b));
    }
    Buffer out(a.rows * a.cols);
    for (std::size_t r = 0; r < a.rows; ++r) {
      const T* pa = a.data() + r * a.cols;
      const T* pb = b.data() + (r % b.rows) * a.cols;
      for (std::size_t c = 0; c < a.cols; ++c) out[r * a.cols + c] = pa[c] + pb[c];
    }
    return push(a.rows, a.cols, std::move(out), needs(big) || needs(small), [big, small](Tape& t, std::uint32_t self) {
      const Node& s = t.nodes_[self];
      if (t.needs(big)) axpy(s.grad, t.gbuf(big));
      if (t.needs(small)) {
        const std::size_t groups = t.nodes_[small.id].rows;
        T* gs = t.gbuf(small);
        for (std::size_t r = 0; r < s.rows; ++r) {
          for (std::size_t c = 0; c < s.cols; ++c) gs[(r % groups) * s.cols + c] += s.grad[r * s.cols + c];
        }
      }
    });
  }

  /// Additive attention scores [(n*B) x 1]: row r is tanh(big[r] + small[r % B])
  /// dotted with v [c x 1] in ascending column order. Equal to
  /// matmul(tanh(add_tiled_rows(big, small)), v) without the intermediates.
  Var additive_scores(Var big, Var small, Var v) {
    const Node& a = nodes_[big.id];
    const Node& b = nodes_[small.id];
    const Node& w = nodes_[v.id];
    if (a.cols != b.cols || b.rows == 0 || a.rows % b.rows != 0 || w.rows != a.cols || w.cols != 1) {
      throw ShapeMismatch("additive_scores: " + shape_str(a) + " + " + shape_str(b) + " . " + shape_str(w));
    }
    const std::size_t n = a.rows, c = a.cols, groups = b.rows;
    const bool grad = record_ && (needs(big) || needs(small) || needs(v));
    // Rows are processed kRows at a time in a transposed buffer, so the
    // per-row sums run side by side; each still adds terms in column order.
    constexpr std::size_t kRows = 16;
    Buffer out(n);
    Buffer th(grad ? n * c : 0);
    std::vector<T> pre(c * kRows, T(0)), tt(c * kRows);
    const T* pa = a.data();
    const T* pb = b.data();
    const T* pv = w.data();
    for (std::size_t r0 = 0; r0 < n; r0 += kRows) {
      const std::size_t m = std::min(kRows, n - r0);
      for (std::size_t i = 0; i < m; ++i) {
        const T* ar = pa + (r0 + i) * c;
        const T* br = pb + ((r0 + i) % groups) * c;
        for (std::size_t k = 0; k < c; ++k) pre[k * kRows + i] = ar[k] + br[k];
      }
      vmath::tanh_n(pre.data(), tt.data(), pre.size());
      T acc[kRows] = {};
      for (std::size_t k = 0; k < c; ++k) {
        const T vk = pv[k];
        const T* tk = tt.data() + k * kRows;
        for (std::size_t i = 0; i < kRows; ++i) acc[i] += tk[i] * vk;
      }
      for (std::size_t i = 0; i < m; ++i) out[r0 + i] = acc[i];
      if (grad) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t k = 0; k < c; ++k) th[(r0 + i) * c + k] = tt[k * kRows + i];
        }
      }
    }
    return push(n, 1, std::move(out), grad, [big, small, v, groups, th = std::move(th)](Tape& t, std::uint32_t self) {
      const Node& s = t.nodes_[self];
      const std::size_t c = t.nodes_[big.id].cols;
      const T* pv = t.nodes_[v.id].data();
      T* gb = t.needs(big) ? t.gbuf(big) : nullptr;
      T* gs = t.needs(small) ? t.gbuf(small) : nullptr;
      T* gv = t.needs(v) ? t.gbuf(v) : nullptr;
      for (std::size_t r = 0; r < s.rows; ++r) {
        const T g = s.grad[r];
        const T* tr = th.data() + r * c;
        for (std::size_t k = 0; k < c; ++k) {
          if (gv) gv[k] += g * tr[k];
          const T d = g * pv[k] * (T(1) - tr[k] * tr[k]);
          if (gb) gb[r * c + k] += d;
          if (gs) gs[(r % groups) * c + k] += d;
        }
      }
    });
  }

  /// scores[(n*B) x 1] laid out time-major (row j*B + i). For every i,
  /// softmax over j restricted to keep[j*B + i] != 0; masked entries are 0.
  Var masked_softmax_groups(Var scores, std::vector<std::uint8_t> keep, std::size_t groups) {
    const Node& a = nodes_[scores.id];
    if (a.cols != 1 || groups == 0 || a.rows % groups != 0 || keep.size() != a.rows) {
      throw ShapeMismatch("masked_softmax_groups: bad shape");
    }
    const std::size_t steps = a.rows / groups;
    Buffer out(a.rows, T(0));
    const T* pa = a.data();
    for (std::size_t i = 0; i < groups; ++i) {
      bool any = false;
      T m = T(0);
      for (std::size_t j = 0; j < steps; ++j) {
        const std::size_t r = j * groups + i;
        if (!keep[r]) continue;
        m = any ? std::max(m, pa[r]) : pa[r];
        any = true;
      }
      if (!any) continue;
      T total = T(0);
      for (std::size_t j = 0; j < steps; ++j) {
        const std::size_t r = j * groups + i;
        if (!keep[r]) continue;
        out[r] = std::exp(pa[r] - m);
        total += out[r];
      }
      for (std::size_t j = 0; j < steps; ++j) {
        const std::size_t r = j * groups + i;
        if (keep[r]) out[r] /= total;
      }
    }
    return push(a.rows, 1, std::move(out), needs(scores), [scores, groups](Tape& t, std::uint32_t self) {
      const Node& s = t.nodes_[self];
      const T* y = s.data();
      const std::size_t steps = s.rows / groups;
      T* gx = t.gbuf(scores);
      for (std::size_t i = 0; i < groups; ++i) {
        T dot = T(0);
        for (std::size_t j = 0; j < steps; ++j) dot += s.grad[j * groups + i] * y[j * groups + i];
        for (std::size_t j = 0; j < steps; ++j) {
          const std::size_t r = j * groups + i;
          gx[r] += y[r] * (s.grad[r] - dot);
        }
      }
    });
  }

  /// out[i] = sum_j weights[j*B + i] * values[j*B + i], j ascending.
  Var attend(Var weights, Var values, std::size_t groups) {
    const Node& w = nodes_[weights.id];
    const Node& v = nodes_[values.id];
    if (w.cols != 1 || w.rows != v.rows || groups == 0 || v.rows % groups != 0) {
      throw ShapeMismatch("attend: bad shape");
    }
    const std::size_t steps = v.rows / groups;
    Buffer out(groups * v.cols, T(0));
    for (std::size_t j = 0; j < steps; ++j) {
      for (std::size_t i = 0; i < groups; ++i) {
        const std::size_t r = j * groups + i;
        const T a = w.data()[r];
        const T* src = v.data() + r * v.cols;
        T* dst = out.data() + i * v.cols;
        for (std::size_t c = 0; c < v.cols; ++c) dst[c] += a * src[c];
      }
    }
    return push(groups, v.cols, std::move(out), needs(weights) || needs(values),
                [weights, values, groups](Tape& t, std::uint32_t self) {
                  const Node& s = t.nodes_[self];
                  const Node& w = t.nodes_[weights.id];
                  const Node& v = t.nodes_[values.id];
                  const std::size_t steps = v.rows / groups;
                  T* gw = t.needs(weights) ? t.gbuf(weights) : nullptr;
                  T* gv = t.needs(values) ? t.gbuf(values) : nullptr;
                  for (std::size_t j = 0; j < steps; ++j) {
                    for (std::size_t i = 0; i < groups; ++i) {
                      const std::size_t r = j * groups + i;
                      const T* g = s.grad.data() + i * v.cols;
                      if (gw) {
                        T acc = T(0);
                        for (std::size_t c = 0; c < v.cols; ++c) acc += g[c] * v.data()[r * v.cols + c];
                        gw[r] += acc;
                      }
                      if (gv) {
                        const T a = w.data()[r];
                        for (std::size_t c = 0; c < v.cols; ++c) gv[r * v.cols + c] += a * g[c];
                      }
                    }
                  }
                });
  }

  Var softmax_rows(Var x) {
    const Node& a = nodes_[x.id];
    Buffer out(a.rows * a.cols);
    for (std::size_t r = 0; r < a.rows; ++r) softmax_row(a.data() + r * a.cols, a.cols, out.data() + r * a.cols);
    return push(a.rows, a.cols, std::move(out), needs(x), [x](Tape& t, std::uint32_t self) {
      const Node& s = t.nodes_[self];
      const T* y = s.data();
      T* gx = t.gbuf(x);
      for (std::size_t r = 0; r < s.rows; ++r) {
        T dot = T(0);
        for (std::size_t c = 0; c < s.cols; ++c) dot += s.grad[r * s.cols + c] * y[r * s.cols + c];
        for (std::size_t c = 0; c < s.cols; ++c) {
          const std::size_t i = r * s.cols + c;
          gx[i] += y[i] * (s.grad[i] - dot);
        }
      }
    });
  }

  /// Weighted sum over rows of -ln(max(softmax(logits[r])[targets[r]], 1e-12)).
  /// Rows with weight 0 contribute nothing (their target is not inspected).
  Var softmax_cross_entropy(Var logits, std::vector<int> targets, std::vector<T> weights) {
    const Node& a = nodes_[logits.id];
    if (targets.size() != a.rows || weights.size() != a.rows) throw ShapeMismatch("softmax_cross_entropy: rows");
    std::vector<T> probs(a.rows * a.cols);
    T total = T(0);
    for (std::size_t r = 0; r < a.rows; ++r) {
      softmax_row(a.data() + r * a.cols, a.cols, probs.data() + r * a.cols);
      if (weights[r] == T(0)) continue;
      if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= a.cols) {
        throw IndexOutOfRange("cross-entropy target " + std::to_string(targets[r]));
      }
      const T p = probs[r * a.cols + static_cast<std::size_t>(targets[r])];
      total += weights[r] * -std::log(std::max(p, static_cast<T>(kProbFloor)));
    }
    return push(1, 1, {total}, needs(logits),
                [logits, targets = std::move(targets), weights = std::move(weights),
                 probs = std::move(probs)](Tape& t, std::uint32_t self) {
                  const T g = t.nodes_[self].grad[0];
                  const std::size_t cols = t.nodes_[logits.id].cols;
                  T* gx = t.gbuf(logits);
                  for (std::size_t r = 0; r < targets.size(); ++r) {
                    if (weights[r] == T(0)) continue;
                    const T k = g * weights[r];
                    for (std::size_t c = 0; c < cols; ++c) {
                      const T onehot = static_cast<int>(c) == targets[r] ? T(1) : T(0);
                      gx[r * cols + c] += k * (probs[r * cols + c] - onehot);
                    }
                  }
                });
  }

  Var reshape(Var x, std::size_t rows, std::size_t cols) {
    const Node& a = nodes_[x.id];
    if (rows * cols != a.rows * a.cols) throw ShapeMismatch("reshape: element count");
    Buffer out(a.data(), a.data() + rows * cols);
    return push(rows, cols, std::move(out), needs(x), [x](Tape& t, std::uint32_t self) {
      axpy(t.nodes_[self].grad, t.gbuf(x));
    });
  }

  // ---- gradients -------------------------------------------------------

  void backward(Var loss) {
    Node& top = nodes_.at(loss.id);
    if (top.rows * top.cols != 1) throw NotScalarLoss();
    for (auto& n : nodes_) n.grad.clear();
    if (!top.needs_grad) return;
    top.grad.assign(1, T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, static_cast<std::uint32_t>(i));
    }
  }

  /// Gradient accumulated for a parameter by the last backward(); zeros if
  /// the parameter never entered this tape.
  std::vector<T> param_grad(const Parameter<T>& p) const {
    const auto it = param_nodes_.find(&p);
    if (it == param_nodes_.end()) return std::vector<T>(p.size(), T(0));
    return grad(it->second);
  }

  /// Adds every parameter node's gradient into the matching parameter of
  /// `params` (matched by identity).
  void accumulate_into(ParamSet<T>& params) const {
    for (auto& p : params.items()) {
      const auto it = param_nodes_.find(&p);
      if (it == param_nodes_.end()) continue;
      const Node& n = nodes_[it->second.id];
      if (n.grad.empty()) continue;
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[i];
    }
  }

 private:
  struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Buffer value;
    const T* external = nullptr;
    const Parameter<T>* param = nullptr;
    std::vector<T> grad;
    std::function<void(Tape&, std::uint32_t)> backward;
    bool needs_grad = false;

    const T* data() const { return external ? external : value.data(); }
  };

  static std::string shape_str(const Node& n) {
    return "[" + std::to_string(n.rows) + "x" + std::to_string(n.cols) + "]";
  }
  static void same_shape(const Node& a, const Node& b, const char* op) {
    if (a.rows != b.rows || a.cols != b.cols) {
      throw ShapeMismatch(std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
    }
  }
  static void axpy(const std::vector<T>& g, T* dst) {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }

  bool needs(Var v) const { return nodes_[v.id].needs_grad; }

  T* gbuf(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad.assign(n.rows * n.cols, T(0));
    return n.grad.data();
  }

  Var push(std::size_t rows, std::size_t cols, Buffer value, bool needs_grad,
           std::function<void(Tape&, std::uint32_t)> backward) {
    Node node;
    node.rows = rows;
    node.cols = cols;
    node.value = std::move(value);
    node.needs_grad = record_ && needs_grad;
    if (node.needs_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, Var> param_nodes_;
};

}  // namespace addrtag::nn
