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

#ifndef FLOWLM_MODEL_HPP
#define FLOWLM_MODEL_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowlm/nn.hpp"
#include "flowlm/random.hpp"
#include "flowlm/trace.hpp"

namespace flowlm {

// How an author's gate combines the shared encoder states.
//   Scalar:       one sigmoid weight per encoder (gate width s).
//   PerDimension: one sigmoid weight per encoder and hidden unit (s * d_h).
//   Pinned:       every encoder weighted by exactly 1, no gate parameters.
enum class GateKind : std::uint8_t { Scalar, PerDimension, Pinned };

std::string_view to_string(GateKind kind);
std::string_view to_string(CellKind kind);
GateKind parse_gate_kind(std::string_view text);
CellKind parse_cell_kind(std::string_view text);

struct ModelShape {
  std::size_t vocab = 0;
  std::size_t embed = 64;
  std::size_t hidden = 64;
  std::size_t encoders = 5;
  std::size_t authors = 1;
  CellKind cell = CellKind::Lstm;
  GateKind gate = GateKind::Scalar;

  std::size_t gate_width() const;

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// Shared embedding and encoders; one gate and one decoder per author.
struct MosModel {
  GateKind gate_kind = GateKind::Scalar;
  Tensor2 embedding;                   // |V| x d_e
  std::vector<RecurrentCell> encoders;  // s shared cells
  std::vector<Affine> gates;           // per author, d_e -> gate width
  std::vector<Affine> decoders;        // per author, d_h -> |V|

  MosModel() = default;
  explicit MosModel(const ModelShape& shape);  // all parameters zero

  ModelShape shape() const;
  std::size_t vocab_size() const { return embedding.rows(); }
  std::size_t author_count() const { return decoders.size(); }
  std::size_t encoder_count() const { return encoders.size(); }

  friend bool operator==(const MosModel&, const MosModel&) = default;
};

// Throws ShapeMismatch when the parts disagree.
void validate(const MosModel& model);

// Weights uniform(-limit, limit), biases zero.
void init_random(MosModel& model, Rng& rng, double limit = 0.08);

// Single-author, single-encoder language model used for external
// pre-training. Shares the MosModel kernel through `as_mos`.
struct PretrainModel {
  Tensor2 embedding;
  RecurrentCell encoder;
  Affine decoder;

  friend bool operator==(const PretrainModel&, const PretrainModel&) = default;
};

PretrainModel make_pretrain_model(std::size_t vocab, std::size_t embed,
                                  std::size_t hidden, CellKind cell, Rng& rng,
                                  double limit = 0.08);
MosModel as_mos(const PretrainModel& model);
PretrainModel as_pretrain(const MosModel& model);

// ---------------------------------------------------------------------------
// Parameter enumeration in serialization order: embedding, each encoder
// (input weights, recurrent weights, bias), each author's gate (weight,
// bias), each author's decoder (weight, bias).

enum class ParamKind : std::uint8_t {
  Embedding,
  EncoderInput,
  EncoderRecurrent,
  EncoderBias,
  GateWeight,
  GateBias,
  DecoderWeight,
  DecoderBias,
};

struct ParamRef {
  ParamKind kind;
  std::size_t owner;  // encoder index or author index

  bool shared() const;
  bool gate() const;
  bool decoder() const;
};

std::vector<std::pair<ParamRef, Tensor2*>> parameters(MosModel& model);
std::vector<std::pair<ParamRef, const Tensor2*>> parameters(
    const MosModel& model);

MosModel zeros_like(const MosModel& model);

// ---------------------------------------------------------------------------
// Forward / backward.

enum class Reduction {
  ChunkMean,     // mean over chunks of each chunk's position-mean loss
  PositionMean,  // mean over every supervised position
};

namespace detail {
struct GraphState;
}

// A recorded forward pass of one author's language model over a set of
// chunks. Recurrent state starts at zero for every chunk, so no gradient
// crosses a chunk boundary.
class LossGraph {
 public:
  LossGraph(LossGraph&&) noexcept;
  LossGraph& operator=(LossGraph&&) noexcept;
  ~LossGraph();

  double loss() const;
  // Per-position cross-entropy, chunks in input order.
  const std::vector<double>& per_unit_losses() const;
  std::size_t positions() const;

  // Gradients of loss() shaped like the model; parameters that did not take
  // part are zero. A graph can be consumed once (GraphConsumed).
  MosModel backward();
  // Adds scale * gradient into `grads` instead of allocating.
  void backward_into(MosModel& grads, double scale = 1.0);

 private:
  friend LossGraph record_author_loss(const MosModel&, std::size_t,
                                      std::span<const TrainingChunk* const>,
                                      Reduction);
  explicit LossGraph(std::unique_ptr<detail::GraphState> state);
  std::unique_ptr<detail::GraphState> state_;
};

LossGraph record_author_loss(const MosModel& model, std::size_t author,
                             std::span<const TrainingChunk* const> chunks,
                             Reduction reduction = Reduction::ChunkMean);
LossGraph record_author_loss(const MosModel& model, std::size_t author,
                             std::span<const TrainingChunk> chunks,
                             Reduction reduction = Reduction::ChunkMean);

struct ChunkLoss {
  double loss = 0.0;  // position mean
  std::vector<double> per_unit;
};

ChunkLoss forward_author(const MosModel& model, std::size_t author,
                         const TrainingChunk& chunk);

struct AuthorBatch {
  std::size_t author = 0;
  std::span<const TrainingChunk> chunks;
};

// Weighted sum of per-author mini-batch losses. Weights must be
// non-negative and sum to one.
double joint_loss(const MosModel& model, std::span<const AuthorBatch> batches,
                  std::span<const double> weights);

// Sum over j != author of |W_author - W_j|_1 + |b_author - b_j|_1. Returns 0
// for a single-author model.
double decoder_reg_loss(const MosModel& model, std::size_t author);

// L1 distances of `decoder` to each of `others` (skipping index `self`),
// gradient accumulated into `grad` scaled by `scale`. Returns the distance
// sum.
double decoder_reg_term(const Affine& decoder, std::span<const Affine> others,
                        std::size_t self, double scale, Affine* grad);

// Averaged regularizer: sum_i decoder_reg_loss(i) / (n (n - 1)).
double mean_decoder_reg(const MosModel& model);

// joint_loss + lambda * mean_decoder_reg, with its gradient when `grads` is
// non-null.
double total_loss(const MosModel& model, std::span<const AuthorBatch> batches,
                  std::span<const double> weights, double lambda,
                  MosModel* grads = nullptr);

// Mean per-unit cross-entropy of one binary under one author. Throws
// EmptyBinary on an empty chunk list.
double binary_loss(const MosModel& model, std::size_t author,
                   std::span<const TrainingChunk> chunks);

// binary_loss for every author, sharing one encoder pass.
std::vector<double> binary_losses(const MosModel& model,
                                  std::span<const TrainingChunk> chunks);

// Mixed representation r_t of every position, one (len x d_h) block per
// chunk. Used when only the decoders are trained.
std::vector<Tensor2> mixed_representations(
    const MosModel& model, std::size_t author,
    std::span<const TrainingChunk* const> chunks);

// ---------------------------------------------------------------------------
// Serialization: "BMLM1", seven little-endian uint32 dims (|V|, d_e, d_h, s,
// n_authors, n, h), then every parameter block in `parameters` order as
// little-endian float64.

struct ModelHeader {
  std::uint32_t vocab = 0;
  std::uint32_t embed = 0;
  std::uint32_t hidden = 0;
  std::uint32_t encoders = 0;
  std::uint32_t authors = 0;
  std::uint32_t ngram = 0;
  std::uint32_t hop = 0;
};

void write_model(std::ostream& out, const MosModel& model, std::uint32_t ngram,
                 std::uint32_t hop);
MosModel read_model(std::istream& in, CellKind cell, GateKind gate,
                    ModelHeader* header = nullptr);

// Model plus the sidecar needed to score binaries with it.
struct ModelBundle {
  MosModel model;
  Vocabulary vocab;
  std::vector<std::string> authors;  // index order
  TraceParams trace;

  std::size_t author_index(std::string_view author_id) const;
};

// Writes `path` and the sidecar `path` + ".json" (author index map, token
// list, architecture, truncation).
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& model_path);

}  // namespace flowlm

#endif  // FLOWLM_MODEL_HPP
