// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "addrtag/nn/layers.hpp"
#include "addrtag/nn/optimizer.hpp"
#include "addrtag/random.hpp"

using namespace addrtag;
using namespace addrtag::nn;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void randomize(Parameter<double>& p, Rng& rng, double scale = 1.0) {
  for (auto& v : p.value) v = rng.uniform(-scale, scale);
}


/// Reduces any node to a scalar through fixed random weights so every
/// output coordinate influences the loss differently.
Var reduce(Tape<double>& t, Var x) {
  Rng rng(99);
  std::vector<double> w(t.rows(x) * t.cols(x));
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return t.sum(t.mul(x, t.constant(t.rows(x), t.cols(x), w)));
}

}  // namespace

TEST_CASE("lstm_step: zero parameters give zero state") {
  ParamSet<double> ps;
  Rng rng(1);
  add_lstm(ps, "l", 3, 2, rng);
  for (auto& p : ps.items()) std::fill(p.value.begin(), p.value.end(), 0.0);
  const auto w = LstmRefs<double>::from(ps, "l");
  const std::vector<double> x = {0.3, -2.0, 5.0};
  const std::vector<double> z = {0.0, 0.0};
  const auto [h, c] = lstm_step<double>(x, z, z, w);
  CHECK(h == z);
  CHECK(c == z);
}

TEST_CASE("lstm_step: one-dimensional cell against the gate equations") {
  ParamSet<double> ps;
  Rng rng(1);
  add_lstm(ps, "l", 1, 1, rng);
  // Gate column order i, f, g, o.
  const double Wi = 0.5, Wf = -0.3, Wg = 0.8, Wo = 0.1;
  const double Ui = 0.2, Uf = 0.4, Ug = -0.6, Uo = 0.7;
  const double bi = 0.1, bf = 1.0, bg = -0.2, bo = 0.05;
  ps.at("l.W").value = {Wi, Wf, Wg, Wo};
  ps.at("l.U").value = {Ui, Uf, Ug, Uo};
  ps.at("l.b").value = {bi, bf, bg, bo};
  const double x = 1.5, h0 = -0.4, c0 = 0.9;
  const double i = sig(Wi * x + Ui * h0 + bi);
  const double f = sig(Wf * x + Uf * h0 + bf);
  const double g = std::tanh(Wg * x + Ug * h0 + bg);
  const double o = sig(Wo * x + Uo * h0 + bo);
  const double c1 = f * c0 + i * g;
  const double h1 = o * std::tanh(c1);
  const std::vector<double> xv = {x}, hv = {h0}, cv = {c0};
  const auto [h, c] = lstm_step<double>(xv, hv, cv, LstmRefs<double>::from(ps, "l"));
  CHECK(h[0] == doctest::Approx(h1).epsilon(1e-14));
  CHECK(c[0] == doctest::Approx(c1).epsilon(1e-14));
}

TEST_CASE("lstm_step: wrong input width") {
  ParamSet<double> ps;
  Rng rng(1);
  add_lstm(ps, "l", 3, 2, rng);
  const std::vector<double> x = {1.0, 2.0};
  const std::vector<double> z = {0.0, 0.0};
  CHECK_THROWS_AS(lstm_step<double>(x, z, z, LstmRefs<double>::from(ps, "l")), ShapeMismatch);
}

TEST_CASE("LSTM initialisation") {
  ParamSet<float> ps;
  Rng rng(3);
  add_lstm(ps, "l", 5, 4, rng);
  const double bound = 0.5;
  for (float v : ps.at("l.W").value) CHECK(std::abs(v) <= bound);
  const auto& b = ps.at("l.b").value;
  for (std::size_t j = 0; j < 16; ++j) CHECK(b[j] == (j >= 4 && j < 8 ? 1.0f : 0.0f));
}

TEST_CASE("softmax examples") {
  const std::vector<double> z3 = {0, 0, 0};
  for (double p : softmax<double>(z3)) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const std::vector<double> l2 = {std::log(2.0), 0.0};
  const auto p = softmax<double>(l2);
  CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(softmax<double>(std::vector<double>{}), ShapeMismatch);
}

TEST_CASE("property: softmax is shift invariant and stable") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + rng.below(12));
    for (auto& x : v) x = rng.uniform(-1e4, 1e4);
    const auto p = softmax<double>(v);
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
    for (double x : p) CHECK(x >= 0.0);
    const double c = rng.uniform(-50, 50);
    std::vector<double> shifted = v;
    for (auto& x : shifted) x += c;
    const auto q = softmax<double>(shifted);
    for (std::size_t j = 0; j < v.size(); ++j) CHECK(q[j] == doctest::Approx(p[j]).epsilon(1e-9));
  }
}

TEST_CASE("cross_entropy examples") {
  const std::vector<double> u = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  CHECK(cross_entropy<double>(u, 2) == doctest::Approx(std::log(3.0)));
  CHECK(cross_entropy<double>(std::vector<double>{1, 0, 0}, 0) == 0.0);
  CHECK(cross_entropy<double>(std::vector<double>{0.5, 0.5}, 1) == doctest::Approx(0.693147180559945));
  CHECK(cross_entropy<double>(std::vector<double>{1, 0}, 1) == doctest::Approx(-std::log(1e-12)));
  CHECK_THROWS_AS(cross_entropy<double>(u, 3), IndexOutOfRange);
}

TEST_CASE("backward basics") {
  ParamSet<double> ps;
  ps.add("w", 1, 1);
  ps.add("unused", 2, 2);
  Parameter<double>& w = ps.at("w");
  Parameter<double>& unused = ps.at("unused");
  w.value = {0.7};
  Tape<double> t;
  const Var loss = t.matmul(t.param(w), t.constant(1, 1, {3.0}));
  t.param(unused);
  t.backward(loss);
  CHECK(t.param_grad(w) == std::vector<double>{3.0});
  CHECK(t.param_grad(unused) == std::vector<double>(4, 0.0));

  Tape<double> t2;
  const Var wide = t2.scale(t2.param(unused), 2.0);
  CHECK_THROWS_AS(t2.backward(wide), NotScalarLoss);
}

TEST_CASE("softmax cross-entropy gradient equals probs minus one-hot") {
  ParamSet<double> ps;
  Parameter<double>& z = ps.add("z", 1, 4);
  z.value = {0.3, -1.2, 2.0, 0.1};
  Tape<double> t;
  const Var loss = t.softmax_cross_entropy(t.param(z), {2}, {1.0});
  t.backward(loss);
  const auto probs = softmax<double>(z.value);
  const auto g = t.param_grad(z);
  for (std::size_t j = 0; j < 4; ++j) CHECK(g[j] == doctest::Approx(probs[j] - (j == 2 ? 1.0 : 0.0)).epsilon(1e-12));
  const auto fn = [&](Tape<double>& tape) { return tape.softmax_cross_entropy(tape.param(z), {2}, {1.0}); };
  CHECK(grad_check<double>(fn, ps, 1e-6) < 1e-7);
}

TEST_CASE("grad_check: linear layer below 1e-6") {
  ParamSet<double> ps;
  Rng rng(8);
  add_linear(ps, "lin", 5, 3, rng);
  randomize(ps.at("lin.b"), rng);
  const std::vector<double> x = {0.2, -0.5, 1.0, 0.3, -0.9, 0.4, 0.1, -0.2, 0.8, 0.6};
  const auto fn = [&](Tape<double>& t) { return reduce(t, linear(t, t.constant(2, 5, x), ps, "lin")); };
  CHECK(grad_check<double>(fn, ps, 1e-6) < 1e-6);
}

TEST_CASE("grad_check: single lstm_step below 1e-5") {
  ParamSet<double> ps;
  Rng rng(9);
  add_lstm(ps, "l", 3, 4, rng);
  ps.add("h0", 2, 4);
  ps.add("c0", 2, 4);
  Parameter<double>& h0 = ps.at("h0");
  Parameter<double>& c0 = ps.at("c0");
  randomize(h0, rng);
  randomize(c0, rng);
  const auto w = LstmRefs<double>::from(ps, "l");
  const std::vector<double> x = {0.5, -1.0, 0.25, 0.1, 0.9, -0.3};
  const auto fn = [&](Tape<double>& t) {
    const LstmState s = lstm_step(t, t.constant(2, 3, x), {t.param(h0), t.param(c0)}, w);
    return t.add(reduce(t, s.h), reduce(t, s.c));
  };
  CHECK(grad_check<double>(fn, ps, 1e-5) < 1e-5);
}

TEST_CASE("grad_check: every tape op") {
  ParamSet<double> params;
  params.add("a", 6, 4);
  params.add("b", 6, 4);
  params.add("w", 4, 3);
  params.add("row", 1, 4);
  params.add("small", 2, 4);
  params.add("scores", 6, 1);
  params.add("table", 5, 4);
  params.add("v", 4, 1);
  Rng rng(123);
  for (auto& p : params.items()) randomize(p, rng);
  Parameter<double>& a = params.at("a");
  Parameter<double>& b = params.at("b");
  Parameter<double>& w = params.at("w");
  Parameter<double>& row = params.at("row");
  Parameter<double>& small = params.at("small");
  Parameter<double>& scores = params.at("scores");
  Parameter<double>& table = params.at("table");
  Parameter<double>& v = params.at("v");
  const std::vector<std::uint8_t> keep = {1, 1, 1, 0, 0, 1};
  const auto check = [&](const char* name, const std::function<Var(Tape<double>&)>& body) {
    const auto fn = [&](Tape<double>& t) { return reduce(t, body(t)); };
    INFO(name);
    CHECK(grad_check<double>(fn, params, 1e-6) < 1e-6);
  };
  check("matmul", [&](Tape<double>& t) { return t.matmul(t.param(a), t.param(w)); });
  check("add", [&](Tape<double>& t) { return t.add(t.param(a), t.param(b)); });
  check("mul", [&](Tape<double>& t) { return t.mul(t.param(a), t.param(b)); });
  check("mul self", [&](Tape<double>& t) { return t.mul(t.param(a), t.param(a)); });
  check("add_row", [&](Tape<double>& t) { return t.add_row(t.param(a), t.param(row)); });
  check("scale", [&](Tape<double>& t) { return t.scale(t.param(a), -1.7); });
  check("sigmoid", [&](Tape<double>& t) { return t.sigmoid(t.param(a)); });
  check("tanh", [&](Tape<double>& t) { return t.tanh(t.param(a)); });
  check("sum", [&](Tape<double>& t) { return t.sum(t.param(a)); });
  check("slice_cols", [&](Tape<double>& t) { return t.slice_cols(t.param(a), 1, 2); });
  check("slice_rows", [&](Tape<double>& t) { return t.slice_rows(t.param(a), 2, 3); });
  check("concat_cols", [&](Tape<double>& t) { return t.concat_cols(t.param(a), t.param(b)); });
  check("concat_rows", [&](Tape<double>& t) { return t.concat_rows({t.param(a), t.param(small), t.param(b)}); });
  check("gather_rows", [&](Tape<double>& t) { return t.gather_rows(t.param(table), {4, 0, -1, 4, 2}); });
  check("blend_rows", [&](Tape<double>& t) { return t.blend_rows(t.param(a), t.param(b), keep); });
  check("mask_rows", [&](Tape<double>& t) { return t.mask_rows(t.param(a), keep); });
  check("add_tiled_rows", [&](Tape<double>& t) { return t.add_tiled_rows(t.param(a), t.param(small)); });
  check("masked_softmax_groups", [&](Tape<double>& t) { return t.masked_softmax_groups(t.param(scores), keep, 2); });
  check("attend", [&](Tape<double>& t) {
    const Var wts = t.masked_softmax_groups(t.param(scores), keep, 2);
    return t.attend(wts, t.param(a), 2);
  });
  check("additive_scores",
        [&](Tape<double>& t) { return t.additive_scores(t.param(a), t.param(small), t.param(v)); });
  check("softmax_rows", [&](Tape<double>& t) { return t.softmax_rows(t.param(a)); });
  check("softmax_cross_entropy",
        [&](Tape<double>& t) { return t.softmax_cross_entropy(t.param(a), {0, 3, 1, 2, 2, 0}, {1, 0.5, 0, 2, 1, 1}); });
  check("reshape", [&](Tape<double>& t) { return t.reshape(t.param(a), 3, 8); });
}

TEST_CASE("property: additive_scores equals the unfused composite bit for bit") {
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t groups = 1 + rng.below(20), steps = 1 + rng.below(12), width = 1 + rng.below(70);
    std::vector<float> big(groups * steps * width), small(groups * width), v(width);
    for (auto* xs : {&big, &small, &v}) {
      for (auto& x : *xs) x = static_cast<float>(rng.uniform(-3.0, 3.0));
    }
    Tape<float> t(false);
    const Var b = t.constant(groups * steps, width, big);
    const Var s = t.constant(groups, width, small);
    const Var w = t.constant(width, 1, v);
    const auto fused = t.values(t.additive_scores(b, s, w));
    const auto plain = t.values(t.matmul(t.tanh(t.add_tiled_rows(b, s)), w));
    CHECK(fused == plain);
  }
}

TEST_CASE("masked softmax puts exact zeros on masked rows") {
  Tape<double> t(false);
  const Var s = t.constant(6, 1, {0.5, 2.0, -1.0, 3.0, 0.0, 0.0});
  const auto p = t.values(t.masked_softmax_groups(s, {1, 1, 1, 0, 0, 1}, 2));
  CHECK(p[3] == 0.0);
  CHECK(p[4] == 0.0);
  CHECK(p[1] + p[5] == doctest::Approx(1.0));
  CHECK(p[0] + p[2] == doctest::Approx(1.0));
}

TEST_CASE("optimizer steps") {
  ParamSet<double> ps;
  Parameter<double>& x = ps.add("x", 1, 1);
  SUBCASE("SGD") {
    auto opt = make_optimizer<double>(Algorithm::sgd, 0.1);
    x.grad = {1.0};
    optimizer_step(ps, opt);
    CHECK(x.value[0] == doctest::Approx(-0.1));
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    for (auto alg : {Algorithm::sgd, Algorithm::adam}) {
      x.value = {0.25};
      x.grad = {0.0};
      auto opt = make_optimizer<double>(alg, 0.1);
      for (int i = 0; i < 3; ++i) optimizer_step(ps, opt);
      CHECK(x.value[0] == 0.25);
    }
  }
  SUBCASE("Adam first step moves by lr against the gradient sign") {
    auto opt = make_optimizer<double>(Algorithm::adam, 0.01);
    x.value = {1.0};
    x.grad = {4.0};
    optimizer_step(ps, opt);
    CHECK(x.value[0] == doctest::Approx(0.99).epsilon(1e-6));
  }
  SUBCASE("moment buffers must match shapes") {
    auto opt = make_optimizer<double>(Algorithm::adam, 0.01);
    optimizer_step(ps, opt);
    opt.first_moment[0].resize(3);
    CHECK_THROWS_AS(optimizer_step(ps, opt), ShapeMismatch);
  }
}

TEST_CASE("property: identical runs give identical trajectories") {
  const auto run = [] {
    ParamSet<double> ps;
    Rng rng(4);
    add_linear(ps, "lin", 3, 2, rng);
    auto opt = make_optimizer<double>(Algorithm::adam, 0.05);
    for (int step = 0; step < 20; ++step) {
      Tape<double> t;
      const Var loss = t.softmax_cross_entropy(linear(t, t.constant(1, 3, {1.0, -2.0, 0.5}), ps, "lin"), {1}, {1.0});
      t.backward(loss);
      ps.zero_grad();
      t.accumulate_into(ps);
      optimizer_step(ps, opt);
    }
    return ps.at("lin.W").value;
  };
  CHECK(run() == run());
}

TEST_CASE("property: matmul rows do not depend on the batch") {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t rows = 1 + rng.below(13), inner = 1 + rng.below(40), cols = 1 + rng.below(70);
    std::vector<float> x(rows * inner), w(inner * cols), y(rows * cols, 0.0f);
    for (auto& v : x) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : w) v = static_cast<float>(rng.uniform(-1, 1));
    kernels::matmul_acc(x.data(), rows, inner, w.data(), cols, y.data());
    for (std::size_t r = 0; r < rows; ++r) {
      std::vector<float> one(cols, 0.0f);
      kernels::matmul_acc(x.data() + r * inner, 1, inner, w.data(), cols, one.data());
      for (std::size_t j = 0; j < cols; ++j) {
        CHECK(one[j] == y[r * cols + j]);
        double ref = 0.0;
        for (std::size_t k = 0; k < inner; ++k) ref += double(x[r * inner + k]) * double(w[k * cols + j]);
        CHECK(double(one[j]) == doctest::Approx(ref).epsilon(1e-4).scale(1.0));
      }
    }
  }
}
