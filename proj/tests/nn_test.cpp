// Copyright 2026 The flowlm Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "flowlm/error.hpp"
#include "flowlm/nn.hpp"

namespace flowlm {
namespace {

Tensor2 random_tensor(Rng& rng, Eigen::Index r, Eigen::Index c, double lim = 1.0) {
  Tensor2 t(r, c);
  init_uniform(t, rng, lim);
  return t;
}

RecurrentCell random_cell(Rng& rng, CellKind kind, Eigen::Index in, Eigen::Index h) {
  RecurrentCell cell(kind, in, h);
  init_uniform(cell.input_weights, rng, 0.7);
  init_uniform(cell.recurrent_weights, rng, 0.7);
  init_uniform(cell.bias, rng, 0.7);
  return cell;
}

// Textbook scalar LSTM, gates stacked i, f, candidate, o.
void scalar_lstm(const RecurrentCell& p, const std::vector<double>& h_prev,
                 const std::vector<double>& c_prev, const std::vector<double>& x,
                 std::vector<double>& h, std::vector<double>& c) {
  const std::size_t H = h_prev.size();
  auto pre = [&](std::size_t row) {
    double z = p.bias(0, row);
    for (std::size_t k = 0; k < x.size(); ++k) z += p.input_weights(row, k) * x[k];
    for (std::size_t k = 0; k < H; ++k) z += p.recurrent_weights(row, k) * h_prev[k];
    return z;
  };
  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  h.assign(H, 0.0);
  c.assign(H, 0.0);
  for (std::size_t u = 0; u < H; ++u) {
    const double i = sig(pre(u));
    const double f = sig(pre(H + u));
    const double g = std::tanh(pre(2 * H + u));
    const double o = sig(pre(3 * H + u));
    c[u] = f * c_prev[u] + i * g;
    h[u] = o * std::tanh(c[u]);
  }
}

std::vector<double> row(const Tensor2& t) {
  return std::vector<double>(t.data(), t.data() + t.size());
}

Tensor2 as_row(const std::vector<double>& v) {
  Tensor2 t(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) t(0, static_cast<Eigen::Index>(i)) = v[i];
  return t;
}

TEST(Lstm, ZeroWeightsGiveZeroHidden) {
  RecurrentCell cell(CellKind::Lstm, 3, 4);
  Rng rng(1);
  const auto s = lstm_step(cell, zeros(1, 4), zeros(1, 4), random_tensor(rng, 1, 3));
  EXPECT_TRUE(s.h.isZero(0.0));
  EXPECT_TRUE(s.c.isZero(0.0));
}

TEST(Lstm, SaturatedForgetGateKeepsCell) {
  RecurrentCell cell(CellKind::Lstm, 3, 4);
  cell.bias.middleCols(4, 4).setConstant(50.0);
  Rng rng(2);
  const Tensor2 c_prev = random_tensor(rng, 1, 4);
  const auto s = lstm_step(cell, random_tensor(rng, 1, 4), c_prev, random_tensor(rng, 1, 3));
  EXPECT_TRUE(s.c.isApprox(c_prev, 1e-12));
}

TEST(Lstm, MatchesScalarOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const RecurrentCell cell = random_cell(rng, CellKind::Lstm, 3, 4);
    const auto x = random_tensor(rng, 1, 3, 2.0);
    const auto hp = random_tensor(rng, 1, 4);
    const auto cp = random_tensor(rng, 1, 4, 2.0);
    const auto s = lstm_step(cell, hp, cp, x);
    std::vector<double> h, c;
    scalar_lstm(cell, row(hp), row(cp), row(x), h, c);
    for (int u = 0; u < 4; ++u) {
      EXPECT_NEAR(s.h(0, u), h[u], 1e-12);
      EXPECT_NEAR(s.c(0, u), c[u], 1e-12);
    }
  }
}

TEST(Lstm, TanhCellMatchesScalarOracle) {
  Rng rng(4);
  const RecurrentCell cell = random_cell(rng, CellKind::Tanh, 3, 4);
  const auto x = random_tensor(rng, 2, 3);
  const auto hp = random_tensor(rng, 2, 4);
  const auto s = cell_forward(cell, x, hp, zeros(2, 4));
  for (int r = 0; r < 2; ++r) {
    for (int u = 0; u < 4; ++u) {
      double z = cell.bias(0, u);
      for (int k = 0; k < 3; ++k) z += cell.input_weights(u, k) * x(r, k);
      for (int k = 0; k < 4; ++k) z += cell.recurrent_weights(u, k) * hp(r, k);
      EXPECT_NEAR(s.h(r, u), std::tanh(z), 1e-12);
    }
  }
  EXPECT_TRUE(s.c.isZero(0.0));
}

TEST(Lstm, ShapeErrors) {
  RecurrentCell cell(CellKind::Lstm, 3, 4);
  try {
    lstm_step(cell, zeros(1, 4), zeros(1, 4), zeros(1, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
  EXPECT_THROW(lstm_step(cell, zeros(1, 3), zeros(1, 4), zeros(1, 3)), Error);
}

TEST(Softmax, UniformAndStable) {
  const std::vector<double> uniform(8, 0.3);
  EXPECT_NEAR(softmax_xent(uniform, 5).loss, std::log(8.0), 1e-15);
  std::vector<double> spiked(8, 0.0);
  spiked[2] = 1000.0;
  const auto s = softmax_xent(spiked, 2);
  EXPECT_TRUE(std::isfinite(s.loss));
  EXPECT_NEAR(s.loss, 0.0, 1e-12);
  spiked[2] = -1000.0;
  EXPECT_NEAR(softmax_xent(spiked, 2).loss, 1000.0 + std::log(7.0), 1e-9);
  EXPECT_THROW(softmax_xent(std::vector<double>{1.0}, 0), Error);
  EXPECT_THROW(softmax_xent(uniform, 8), Error);
}

TEST(Softmax, MatchesLongDoubleOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t V = 2 + uniform_index(rng, 60);
    std::vector<double> logits(V);
    for (auto& l : logits) l = uniform(rng, -30.0, 30.0);
    const std::size_t target = uniform_index(rng, V);
    const auto s = softmax_xent(logits, target);
    long double z = 0.0L;
    for (double l : logits) z += std::exp(static_cast<long double>(l));
    const long double want = std::log(z) - static_cast<long double>(logits[target]);
    EXPECT_NEAR(s.loss, static_cast<double>(want), 1e-12 * std::max(1.0, s.loss));
    const double total = std::accumulate(s.probs.begin(), s.probs.end(), 0.0);
    EXPECT_NEAR(total, 1.0, 1e-12);
    for (std::size_t v = 0; v < V; ++v) {
      EXPECT_GE(s.probs[v], 0.0);
      EXPECT_NEAR(s.probs[v],
                  static_cast<double>(std::exp(static_cast<long double>(logits[v])) / z),
                  1e-12);
    }
  }
}

TEST(Softmax, RowsAgreeWithSingle) {
  Rng rng(6);
  Tensor2 logits = random_tensor(rng, 5, 9, 4.0);
  const Tensor2 copy = logits;
  const std::vector<std::int32_t> targets = {0, 3, 8, 2, 2};
  std::vector<double> losses(5);
  softmax_xent_rows(logits, targets, losses);
  for (int r = 0; r < 5; ++r) {
    const auto v = row(copy.row(r));
    const auto s = softmax_xent(v, targets[r]);
    EXPECT_NEAR(losses[r], s.loss, 1e-13);
    for (int c = 0; c < 9; ++c) EXPECT_NEAR(logits(r, c), s.probs[c], 1e-15);
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Rng rng(7);
  Tensor2 p = random_tensor(rng, 3, 4);
  const Tensor2 before = p;
  AdamState st(p);
  adam_step(p, zeros(3, 4), st, {});
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, ConstantGradientStepTendsToLearningRate) {
  Tensor2 p = zeros(1, 3);
  Tensor2 g(1, 3);
  g << 0.5, -3.0, 1e-3;
  AdamState st(p);
  AdamConfig cfg;
  Tensor2 prev = p;
  for (int i = 0; i < 1000; ++i) {
    prev = p;
    adam_step(p, g, st, cfg);
  }
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(std::abs(p(0, k) - prev(0, k)), cfg.learning_rate,
                0.01 * cfg.learning_rate);
  }
}

TEST(Adam, MatchesScalarOracle) {
  Rng rng(8);
  AdamConfig cfg{0.03, 0.85, 0.995, 1e-7};
  Tensor2 p = random_tensor(rng, 2, 5);
  std::vector<double> q = row(p), m(q.size(), 0.0), v(q.size(), 0.0);
  AdamState st(p);
  for (int t = 1; t <= 150; ++t) {
    const Tensor2 g = random_tensor(rng, 2, 5, 3.0);
    adam_step(p, g, st, cfg);
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double gi = g.data()[i];
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * gi * gi;
      const double mh = m[i] / (1 - std::pow(cfg.beta1, t));
      const double vh = v[i] / (1 - std::pow(cfg.beta2, t));
      q[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.epsilon);
    }
    for (std::size_t i = 0; i < q.size(); ++i) {
      ASSERT_NEAR(p.data()[i], q[i], 1e-12);
    }
  }
  EXPECT_THROW(adam_step(p, zeros(5, 2), st, cfg), Error);
}

// Central differences of a scalar function of one tensor.
template <typename F>
void expect_gradient(Tensor2& param, const Tensor2& analytic, F loss,
                     double tol = 1e-6) {
  const double eps = 1e-5;
  for (Eigen::Index i = 0; i < param.size(); ++i) {
    const double keep = param.data()[i];
    param.data()[i] = keep + eps;
    const double up = loss();
    param.data()[i] = keep - eps;
    const double down = loss();
    param.data()[i] = keep;
    const double fd = (up - down) / (2 * eps);
    const double a = analytic.data()[i];
    EXPECT_LE(std::abs(fd - a), tol * std::max(1.0, std::abs(fd) + std::abs(a)))
        << "coordinate " << i << " fd=" << fd << " analytic=" << a;
  }
}

TEST(Gradient, AffineSumOfOutputs) {
  Rng rng(9);
  Affine layer(4, 3);
  init_uniform(layer.weight, rng, 1.0);
  Tensor2 x = random_tensor(rng, 2, 4);
  Affine grad(4, 3);
  const Tensor2 dy = Tensor2::Ones(2, 3);
  const Tensor2 dx = affine_backward(layer, x, dy, grad);
  EXPECT_TRUE(grad.bias.isApprox(Tensor2::Constant(1, 3, 2.0)));
  auto loss = [&] { return affine_forward(layer, x).sum(); };
  expect_gradient(layer.weight, grad.weight, loss);
  expect_gradient(x, dx, loss);
}

class CellGradient : public ::testing::TestWithParam<CellKind> {};

TEST_P(CellGradient, MatchesFiniteDifferences) {
  Rng rng(10);
  RecurrentCell cell = random_cell(rng, GetParam(), 3, 4);
  Tensor2 x = random_tensor(rng, 2, 3);
  Tensor2 hp = random_tensor(rng, 2, 4);
  Tensor2 cp = random_tensor(rng, 2, 4);
  const Tensor2 wh = random_tensor(rng, 2, 4);
  const Tensor2 wc = random_tensor(rng, 2, 4);
  const bool lstm = GetParam() == CellKind::Lstm;
  auto loss = [&] {
    const CellStep s = cell_forward(cell, x, hp, cp);
    return s.h.cwiseProduct(wh).sum() + (lstm ? s.c.cwiseProduct(wc).sum() : 0.0);
  };
  const CellStep s = cell_forward(cell, x, hp, cp);
  RecurrentCell grad(GetParam(), 3, 4);
  const CellGrad g = cell_backward(cell, s, x, hp, cp, wh, lstm ? wc : zeros(2, 4), grad);
  expect_gradient(cell.input_weights, grad.input_weights, loss);
  expect_gradient(cell.recurrent_weights, grad.recurrent_weights, loss);
  expect_gradient(cell.bias, grad.bias, loss);
  expect_gradient(x, g.dx, loss);
  expect_gradient(hp, g.dh_prev, loss);
  if (lstm) expect_gradient(cp, g.dc_prev, loss);
}

INSTANTIATE_TEST_SUITE_P(Kinds, CellGradient,
                         ::testing::Values(CellKind::Lstm, CellKind::Tanh));

TEST(Tensor, Helpers) {
  Tensor2 t = zeros(2, 2);
  EXPECT_TRUE(all_finite(t));
  t(1, 1) = std::nan("");
  EXPECT_FALSE(all_finite(t));
  EXPECT_THROW(check_same_shape(zeros(1, 2), zeros(2, 1), "x"), Error);
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  EXPECT_EQ(gate_count(CellKind::Lstm), 4);
  EXPECT_EQ(gate_count(CellKind::Tanh), 1);
}

}  // namespace
}  // namespace flowlm
