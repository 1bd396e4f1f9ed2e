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

#ifndef FLOWLM_NN_HPP
#define FLOWLM_NN_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "flowlm/random.hpp"

namespace flowlm {

// Row-major dense matrix of doubles. Vectors are 1 x n rows.
using Tensor2 =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Tensor2 zeros(Eigen::Index rows, Eigen::Index cols);
void init_uniform(Tensor2& t, Rng& rng, double limit);
bool all_finite(const Tensor2& t);
void check_same_shape(const Tensor2& a, const Tensor2& b, const char* what);

double sigmoid(double x);

// ---------------------------------------------------------------------------
// Affine layer: y = W x + b, applied to every row of a batch.

struct Affine {
  Tensor2 weight;  // out x in
  Tensor2 bias;    // 1 x out

  Affine() = default;
  Affine(Eigen::Index in, Eigen::Index out);

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }

  friend bool operator==(const Affine& a, const Affine& b) {
    return a.weight == b.weight && a.bias == b.bias;
  }
};

Tensor2 affine_forward(const Affine& layer, const Tensor2& x);
// Accumulates parameter gradients into `grad` and returns dL/dx.
Tensor2 affine_backward(const Affine& layer, const Tensor2& x,
                        const Tensor2& dy, Affine& grad);

// ---------------------------------------------------------------------------
// Recurrent cells. Gate rows of an LSTM are stacked as input, forget,
// candidate, output.

enum class CellKind : std::uint8_t { Lstm, Tanh };

struct RecurrentCell {
  CellKind kind = CellKind::Lstm;
  Tensor2 input_weights;      // G*h x d_in
  Tensor2 recurrent_weights;  // G*h x h
  Tensor2 bias;               // 1 x G*h

  RecurrentCell() = default;
  RecurrentCell(CellKind kind, Eigen::Index input_dim, Eigen::Index hidden_dim);

  Eigen::Index input_dim() const { return input_weights.cols(); }
  Eigen::Index hidden_dim() const { return recurrent_weights.cols(); }

  friend bool operator==(const RecurrentCell& a, const RecurrentCell& b) {
    return a.kind == b.kind && a.input_weights == b.input_weights &&
           a.recurrent_weights == b.recurrent_weights && a.bias == b.bias;
  }
};

int gate_count(CellKind kind);

// Batched step over rows. For the tanh cell `c` is unused and returned as
// zeros.
struct CellStep {
  Tensor2 h;
  Tensor2 c;
  Tensor2 activations;  // post-nonlinearity gate values, rows x G*h
  Tensor2 tanh_c;       // LSTM only
};

CellStep cell_forward(const RecurrentCell& cell, const Tensor2& x,
                      const Tensor2& h_prev, const Tensor2& c_prev);

struct CellGrad {
  Tensor2 dx;
  Tensor2 dh_prev;
  Tensor2 dc_prev;
};

// Backward through one step given the total upstream dL/dh and dL/dc.
CellGrad cell_backward(const RecurrentCell& cell, const CellStep& step,
                       const Tensor2& x, const Tensor2& h_prev,
                       const Tensor2& c_prev, const Tensor2& dh,
                       const Tensor2& dc, RecurrentCell& grad);

struct LstmState {
  Tensor2 h;  // 1 x d_h
  Tensor2 c;  // 1 x d_h
};

// Single-vector step, throws ShapeMismatch on inconsistent dimensions.
LstmState lstm_step(const RecurrentCell& params, const Tensor2& h_prev,
                    const Tensor2& c_prev, const Tensor2& x);

// ---------------------------------------------------------------------------

struct SoftmaxXent {
  double loss = 0.0;
  std::vector<double> probs;
};

// Max-shifted softmax and -log p[target].
SoftmaxXent softmax_xent(std::span<const double> logits, std::size_t target);

// Row-wise softmax cross-entropy. On return `logits` holds the probabilities
// and `losses` the per-row loss.
void softmax_xent_rows(Tensor2& logits, std::span<const std::int32_t> targets,
                       std::span<double> losses);

// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Tensor2 m;
  Tensor2 v;
  std::int64_t step = 0;

  AdamState() = default;
  explicit AdamState(const Tensor2& like);
};

// Bias-corrected Adam update of `param` in place.
void adam_step(Tensor2& param, const Tensor2& grad, AdamState& state,
               const AdamConfig& config);

}  // namespace flowlm

#endif  // FLOWLM_NN_HPP
