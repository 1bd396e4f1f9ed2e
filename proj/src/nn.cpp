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

#include "flowlm/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flowlm/error.hpp"

namespace flowlm {

namespace {

[[noreturn]] void shape_error(const std::string& what) {
  throw Error(ErrorCode::ShapeMismatch, what);
}

std::string dims(const Tensor2& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

}  // namespace

Tensor2 zeros(Eigen::Index rows, Eigen::Index cols) {
  return Tensor2::Zero(rows, cols);
}

void init_uniform(Tensor2& t, Rng& rng, double limit) {
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    t.data()[i] = uniform(rng, -limit, limit);
  }
}

bool all_finite(const Tensor2& t) { return t.allFinite(); }

void check_same_shape(const Tensor2& a, const Tensor2& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    shape_error(std::string(what) + ": " + dims(a) + " vs " + dims(b));
  }
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

using Cols = Eigen::Ref<Tensor2, 0, Eigen::OuterStride<>>;

// exp-based forms vectorize; the libm tanh does not.
void apply_sigmoid(Cols b) {
  b = (1.0 + (-b.array()).exp()).inverse().matrix();
}

void apply_tanh(Cols b) {
  b = (2.0 / (1.0 + (-2.0 * b.array()).exp()) - 1.0).matrix();
}

}  // namespace

Affine::Affine(Eigen::Index in, Eigen::Index out)
    : weight(zeros(out, in)), bias(zeros(1, out)) {}

Tensor2 affine_forward(const Affine& layer, const Tensor2& x) {
  if (x.cols() != layer.in_dim()) {
    shape_error("affine input " + dims(x) + " for weight " +
                dims(layer.weight));
  }
  Tensor2 y = x * layer.weight.transpose();
  y.rowwise() += layer.bias.row(0);
  return y;
}

Tensor2 affine_backward(const Affine& layer, const Tensor2& x,
                        const Tensor2& dy, Affine& grad) {
  grad.weight.noalias() += dy.transpose() * x;
  grad.bias += dy.colwise().sum();
  return dy * layer.weight;
}

int gate_count(CellKind kind) { return kind == CellKind::Lstm ? 4 : 1; }

RecurrentCell::RecurrentCell(CellKind k, Eigen::Index input_dim,
                             Eigen::Index hidden_dim)
    : kind(k),
      input_weights(zeros(gate_count(k) * hidden_dim, input_dim)),
      recurrent_weights(zeros(gate_count(k) * hidden_dim, hidden_dim)),
      bias(zeros(1, gate_count(k) * hidden_dim)) {}

CellStep cell_forward(const RecurrentCell& cell, const Tensor2& x,
                      const Tensor2& h_prev, const Tensor2& c_prev) {
  const Eigen::Index n = x.rows();
  const Eigen::Index hd = cell.hidden_dim();
  CellStep out;
  out.activations.noalias() = x * cell.input_weights.transpose();
  out.activations.noalias() += h_prev * cell.recurrent_weights.transpose();
  out.activations.rowwise() += cell.bias.row(0);
  auto& a = out.activations;
  if (cell.kind == CellKind::Tanh) {
    apply_tanh(a);
    out.h = a;
    out.c = zeros(n, hd);
    return out;
  }
  apply_sigmoid(a.leftCols(2 * hd));
  apply_tanh(a.middleCols(2 * hd, hd));
  apply_sigmoid(a.rightCols(hd));
  out.c = a.leftCols(hd).cwiseProduct(a.middleCols(2 * hd, hd)) +
          a.middleCols(hd, hd).cwiseProduct(c_prev);
  out.tanh_c = out.c;
  apply_tanh(out.tanh_c);
  out.h = a.rightCols(hd).cwiseProduct(out.tanh_c);
  return out;
}

CellGrad cell_backward(const RecurrentCell& cell, const CellStep& step,
                       const Tensor2& x, const Tensor2& h_prev,
                       const Tensor2& c_prev, const Tensor2& dh,
                       const Tensor2& dc, RecurrentCell& grad) {
  const Eigen::Index hd = cell.hidden_dim();
  const auto& a = step.activations;
  Tensor2 dz(a.rows(), a.cols());
  CellGrad out;
  if (cell.kind == CellKind::Tanh) {
    dz = dh.array() * (1.0 - a.array().square());
    out.dc_prev = zeros(dh.rows(), hd);
  } else {
    const auto i = a.leftCols(hd).array();
    const auto f = a.middleCols(hd, hd).array();
    const auto g = a.middleCols(2 * hd, hd).array();
    const auto o = a.rightCols(hd).array();
    const auto tc = step.tanh_c.array();
    const Eigen::ArrayXXd dct = dc.array() + dh.array() * o * (1.0 - tc.square());
    dz.leftCols(hd) = dct * g * i * (1.0 - i);
    dz.middleCols(hd, hd) = dct * c_prev.array() * f * (1.0 - f);
    dz.middleCols(2 * hd, hd) = dct * i * (1.0 - g.square());
    dz.rightCols(hd) = dh.array() * tc * o * (1.0 - o);
    out.dc_prev = dct * f;
  }
  grad.input_weights.noalias() += dz.transpose() * x;
  grad.recurrent_weights.noalias() += dz.transpose() * h_prev;
  grad.bias += dz.colwise().sum();
  out.dx.noalias() = dz * cell.input_weights;
  out.dh_prev.noalias() = dz * cell.recurrent_weights;
  return out;
}

LstmState lstm_step(const RecurrentCell& params, const Tensor2& h_prev,
                    const Tensor2& c_prev, const Tensor2& x) {
  const Eigen::Index hd = params.hidden_dim();
  const Eigen::Index g = gate_count(params.kind);
  if (params.input_weights.rows() != g * hd ||
      params.recurrent_weights.rows() != g * hd ||
      params.bias.rows() != 1 || params.bias.cols() != g * hd) {
    shape_error("inconsistent recurrent cell parameters");
  }
  if (x.rows() != 1 || x.cols() != params.input_dim()) {
    shape_error("cell input " + dims(x) + ", expected 1x" +
                std::to_string(params.input_dim()));
  }
  if (h_prev.rows() != 1 || h_prev.cols() != hd || c_prev.rows() != 1 ||
      c_prev.cols() != hd) {
    shape_error("cell state must be 1x" + std::to_string(hd));
  }
  CellStep s = cell_forward(params, x, h_prev, c_prev);
  return {std::move(s.h), std::move(s.c)};
}

SoftmaxXent softmax_xent(std::span<const double> logits, std::size_t target) {
  if (logits.size() < 2 || target >= logits.size()) {
    shape_error("softmax over " + std::to_string(logits.size()) +
                " logits with target " + std::to_string(target));
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  SoftmaxXent out;
  out.probs.resize(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out.probs[k] = std::exp(logits[k] - mx);
    sum += out.probs[k];
  }
  for (double& p : out.probs) p /= sum;
  out.loss = std::log(sum) - (logits[target] - mx);
  return out;
}

void softmax_xent_rows(Tensor2& logits, std::span<const std::int32_t> targets,
                       std::span<double> losses) {
  const Eigen::Index n = logits.rows();
  if (static_cast<std::size_t>(n) != targets.size() ||
      targets.size() != losses.size()) {
    shape_error("softmax rows / targets mismatch");
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    auto row = logits.row(r);
    const double mx = row.maxCoeff();
    const double z = row(targets[r]) - mx;
    row = (row.array() - mx).exp();
    const double sum = row.sum();
    row /= sum;
    losses[r] = std::log(sum) - z;
  }
}

AdamState::AdamState(const Tensor2& like)
    : m(zeros(like.rows(), like.cols())), v(zeros(like.rows(), like.cols())) {}

void adam_step(Tensor2& param, const Tensor2& grad, AdamState& state,
               const AdamConfig& config) {
  check_same_shape(param, grad, "adam gradient");
  if (state.m.size() == 0 && param.size() != 0) state = AdamState(param);
  check_same_shape(param, state.m, "adam first moment");
  check_same_shape(param, state.v, "adam second moment");
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  state.m = config.beta1 * state.m + (1.0 - config.beta1) * grad;
  state.v = config.beta2 * state.v + (1.0 - config.beta2) * grad.cwiseAbs2();
  param.array() -= config.learning_rate * (state.m.array() / c1) /
                   ((state.v.array() / c2).sqrt() + config.epsilon);
}

}  // namespace flowlm
