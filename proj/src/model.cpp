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

#include "flowlm/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include "json.hpp"

#include "flowlm/error.hpp"

namespace flowlm {

namespace {

[[noreturn]] void shape_error(const std::string& what) {
  throw Error(ErrorCode::ShapeMismatch, what);
}

void check_author(const MosModel& model, std::size_t author) {
  if (author >= model.author_count()) {
    throw Error(ErrorCode::UnknownAuthor,
                "author index " + std::to_string(author) + " of " +
                    std::to_string(model.author_count()));
  }
}

}  // namespace

std::string_view to_string(GateKind kind) {
  switch (kind) {
    case GateKind::Scalar: return "scalar";
    case GateKind::PerDimension: return "per-dimension";
    case GateKind::Pinned: return "pinned";
  }
  return "scalar";
}

std::string_view to_string(CellKind kind) {
  return kind == CellKind::Lstm ? "lstm" : "tanh";
}

GateKind parse_gate_kind(std::string_view text) {
  if (text == "scalar") return GateKind::Scalar;
  if (text == "per-dimension") return GateKind::PerDimension;
  if (text == "pinned") return GateKind::Pinned;
  throw Error(ErrorCode::InvalidConfig,
              "unknown gate kind '" + std::string(text) + "'");
}

CellKind parse_cell_kind(std::string_view text) {
  if (text == "lstm") return CellKind::Lstm;
  if (text == "tanh") return CellKind::Tanh;
  throw Error(ErrorCode::InvalidConfig,
              "unknown cell kind '" + std::string(text) + "'");
}

std::size_t ModelShape::gate_width() const {
  switch (gate) {
    case GateKind::Scalar: return encoders;
    case GateKind::PerDimension: return encoders * hidden;
    case GateKind::Pinned: return 0;
  }
  return encoders;
}

MosModel::MosModel(const ModelShape& s) : gate_kind(s.gate) {
  const auto V = static_cast<Eigen::Index>(s.vocab);
  const auto de = static_cast<Eigen::Index>(s.embed);
  const auto dh = static_cast<Eigen::Index>(s.hidden);
  embedding = zeros(V, de);
  encoders.assign(s.encoders, RecurrentCell(s.cell, de, dh));
  gates.assign(s.authors, Affine(de, static_cast<Eigen::Index>(s.gate_width())));
  decoders.assign(s.authors, Affine(dh, V));
}

ModelShape MosModel::shape() const {
  ModelShape s;
  s.vocab = static_cast<std::size_t>(embedding.rows());
  s.embed = static_cast<std::size_t>(embedding.cols());
  s.hidden = encoders.empty() ? 0 : encoders.front().hidden_dim();
  s.encoders = encoders.size();
  s.authors = decoders.size();
  s.cell = encoders.empty() ? CellKind::Lstm : encoders.front().kind;
  s.gate = gate_kind;
  return s;
}

void validate(const MosModel& m) {
  if (m.encoders.empty()) shape_error("model has no encoder");
  if (m.decoders.empty()) shape_error("model has no author");
  if (m.gates.size() != m.decoders.size()) {
    shape_error("gate count differs from decoder count");
  }
  const ModelShape s = m.shape();
  if (s.vocab < 2) shape_error("vocabulary must hold at least 2 tokens");
  const auto G = gate_count(s.cell);
  for (const auto& e : m.encoders) {
    if (e.kind != s.cell || e.input_dim() != static_cast<Eigen::Index>(s.embed) ||
        e.hidden_dim() != static_cast<Eigen::Index>(s.hidden) ||
        e.input_weights.rows() != G * e.hidden_dim() ||
        e.recurrent_weights.rows() != G * e.hidden_dim() ||
        e.bias.rows() != 1 || e.bias.cols() != G * e.hidden_dim()) {
      shape_error("inconsistent encoder shapes");
    }
  }
  for (const auto& g : m.gates) {
    if (g.in_dim() != static_cast<Eigen::Index>(s.embed) ||
        g.out_dim() != static_cast<Eigen::Index>(s.gate_width()) ||
        g.bias.rows() != 1 || g.bias.cols() != g.out_dim()) {
      shape_error("inconsistent gate shapes");
    }
  }
  for (const auto& d : m.decoders) {
    if (d.in_dim() != static_cast<Eigen::Index>(s.hidden) ||
        d.out_dim() != static_cast<Eigen::Index>(s.vocab) ||
        d.bias.rows() != 1 || d.bias.cols() != d.out_dim()) {
      shape_error("inconsistent decoder shapes");
    }
  }
}

void init_random(MosModel& model, Rng& rng, double limit) {
  for (auto& [ref, t] : parameters(model)) {
    switch (ref.kind) {
      case ParamKind::EncoderBias:
      case ParamKind::GateBias:
      case ParamKind::DecoderBias:
        t->setZero();
        break;
      default:
        init_uniform(*t, rng, limit);
    }
  }
}

PretrainModel make_pretrain_model(std::size_t vocab, std::size_t embed,
                                  std::size_t hidden, CellKind cell, Rng& rng,
                                  double limit) {
  ModelShape shape;
  shape.vocab = vocab;
  shape.embed = embed;
  shape.hidden = hidden;
  shape.encoders = 1;
  shape.authors = 1;
  shape.cell = cell;
  shape.gate = GateKind::Pinned;
  MosModel m(shape);
  init_random(m, rng, limit);
  return as_pretrain(m);
}

MosModel as_mos(const PretrainModel& p) {
  MosModel m;
  m.gate_kind = GateKind::Pinned;
  m.embedding = p.embedding;
  m.encoders = {p.encoder};
  m.gates = {Affine(p.embedding.cols(), 0)};
  m.decoders = {p.decoder};
  validate(m);
  return m;
}

PretrainModel as_pretrain(const MosModel& m) {
  if (m.encoders.size() != 1 || m.decoders.size() != 1 ||
      m.gate_kind != GateKind::Pinned) {
    shape_error("pre-trained model needs one encoder, one author, no gate");
  }
  return {m.embedding, m.encoders.front(), m.decoders.front()};
}

bool ParamRef::shared() const {
  return kind == ParamKind::Embedding || kind == ParamKind::EncoderInput ||
         kind == ParamKind::EncoderRecurrent || kind == ParamKind::EncoderBias;
}
bool ParamRef::gate() const {
  return kind == ParamKind::GateWeight || kind == ParamKind::GateBias;
}
bool ParamRef::decoder() const {
  return kind == ParamKind::DecoderWeight || kind == ParamKind::DecoderBias;
}

namespace {

template <typename Model, typename Ptr>
std::vector<std::pair<ParamRef, Ptr>> collect(Model& m) {
  std::vector<std::pair<ParamRef, Ptr>> out;
  out.push_back({{ParamKind::Embedding, 0}, &m.embedding});
  for (std::size_t j = 0; j < m.encoders.size(); ++j) {
    out.push_back({{ParamKind::EncoderInput, j}, &m.encoders[j].input_weights});
    out.push_back(
        {{ParamKind::EncoderRecurrent, j}, &m.encoders[j].recurrent_weights});
    out.push_back({{ParamKind::EncoderBias, j}, &m.encoders[j].bias});
  }
  for (std::size_t a = 0; a < m.gates.size(); ++a) {
    out.push_back({{ParamKind::GateWeight, a}, &m.gates[a].weight});
    out.push_back({{ParamKind::GateBias, a}, &m.gates[a].bias});
  }
  for (std::size_t a = 0; a < m.decoders.size(); ++a) {
    out.push_back({{ParamKind::DecoderWeight, a}, &m.decoders[a].weight});
    out.push_back({{ParamKind::DecoderBias, a}, &m.decoders[a].bias});
  }
  return out;
}

}  // namespace

std::vector<std::pair<ParamRef, Tensor2*>> parameters(MosModel& model) {
  return collect<MosModel, Tensor2*>(model);
}

std::vector<std::pair<ParamRef, const Tensor2*>> parameters(
    const MosModel& model) {
  return collect<const MosModel, const Tensor2*>(model);
}

MosModel zeros_like(const MosModel& model) {
  MosModel g = model;
  for (auto& [ref, t] : parameters(g)) t->setZero();
  return g;
}

// ---------------------------------------------------------------------------

namespace detail {

// Encoder pass over a batch. Chunks are ordered by decreasing length so the
// rows alive at step t are always a prefix.
struct Encoded {
  std::vector<const TrainingChunk*> sorted;
  std::vector<std::size_t> original;
  std::vector<Eigen::Index> active;
  std::vector<Tensor2> x;
  std::vector<std::vector<CellStep>> steps;  // encoder -> step
};

struct Head {
  std::vector<Tensor2> gate;     // step -> rows x gate width
  std::vector<Tensor2> mixed;    // step -> rows x d_h
  std::vector<Tensor2> dlogits;  // step -> rows x |V|, already weighted
};

struct GraphState {
  const MosModel* model = nullptr;
  std::size_t author = 0;
  Encoded enc;
  Head head;
  double loss = 0.0;
  std::vector<double> per_unit;
  std::size_t positions = 0;
  bool consumed = false;
};

}  // namespace detail

namespace {

using detail::Encoded;
using detail::Head;

Encoded encode(const MosModel& m, std::span<const TrainingChunk* const> chunks) {
  const auto V = static_cast<TokenId>(m.vocab_size());
  for (const TrainingChunk* c : chunks) {
    if (c->input_ids.size() != c->target_ids.size()) {
      shape_error("chunk inputs and targets differ in length");
    }
    for (std::size_t t = 0; t < c->size(); ++t) {
      if (c->input_ids[t] < 0 || c->input_ids[t] >= V || c->target_ids[t] < 0 ||
          c->target_ids[t] >= V) {
        shape_error("token id outside the vocabulary");
      }
    }
  }
  Encoded e;
  e.original.resize(chunks.size());
  std::iota(e.original.begin(), e.original.end(), std::size_t{0});
  std::stable_sort(e.original.begin(), e.original.end(),
                   [&](std::size_t a, std::size_t b) {
                     return chunks[a]->size() > chunks[b]->size();
                   });
  for (std::size_t i : e.original) e.sorted.push_back(chunks[i]);
  const std::size_t steps = e.sorted.empty() ? 0 : e.sorted.front()->size();
  const Eigen::Index de = m.embedding.cols();
  const Eigen::Index dh = m.encoders.front().hidden_dim();
  e.steps.assign(m.encoders.size(), {});
  for (std::size_t t = 0; t < steps; ++t) {
    Eigen::Index k = 0;
    while (k < static_cast<Eigen::Index>(e.sorted.size()) &&
           e.sorted[k]->size() > t) {
      ++k;
    }
    e.active.push_back(k);
    Tensor2 x(k, de);
    for (Eigen::Index r = 0; r < k; ++r) {
      x.row(r) = m.embedding.row(e.sorted[r]->input_ids[t]);
    }
    for (std::size_t j = 0; j < m.encoders.size(); ++j) {
      if (t == 0) {
        e.steps[j].push_back(
            cell_forward(m.encoders[j], x, zeros(k, dh), zeros(k, dh)));
      } else {
        const CellStep& prev = e.steps[j][t - 1];
        e.steps[j].push_back(cell_forward(m.encoders[j], x, prev.h.topRows(k),
                                          prev.c.topRows(k)));
      }
    }
    e.x.push_back(std::move(x));
  }
  return e;
}

// Gate activations and mixed representation of step t.
void mix_step(const MosModel& m, std::size_t author, const Encoded& e,
              std::size_t t, Tensor2& gate, Tensor2& mixed) {
  const Eigen::Index k = e.active[t];
  const Eigen::Index dh = m.encoders.front().hidden_dim();
  mixed = zeros(k, dh);
  switch (m.gate_kind) {
    case GateKind::Pinned:
      for (const auto& steps : e.steps) mixed += steps[t].h;
      return;
    case GateKind::Scalar:
      gate = affine_forward(m.gates[author], e.x[t])
                 .unaryExpr([](double v) { return sigmoid(v); });
      for (std::size_t j = 0; j < e.steps.size(); ++j) {
        mixed.array() += e.steps[j][t].h.array().colwise() *
                         gate.col(static_cast<Eigen::Index>(j)).array();
      }
      return;
    case GateKind::PerDimension:
      gate = affine_forward(m.gates[author], e.x[t])
                 .unaryExpr([](double v) { return sigmoid(v); });
      for (std::size_t j = 0; j < e.steps.size(); ++j) {
        mixed += e.steps[j][t].h.cwiseProduct(
            gate.middleCols(static_cast<Eigen::Index>(j) * dh, dh));
      }
      return;
  }
}

// Runs gate, decoder and cross-entropy for one author. `weight[r]` is the
// per-position weight of sorted chunk r. Returns the weighted loss.
double run_head(const MosModel& m, std::size_t author, const Encoded& e,
                std::span<const double> weight, bool keep_grad, Head& head,
                std::vector<std::vector<double>>* losses) {
  const std::size_t steps = e.active.size();
  head.gate.assign(steps, {});
  head.mixed.assign(steps, {});
  if (keep_grad) head.dlogits.assign(steps, {});
  if (losses) {
    losses->assign(e.sorted.size(), {});
    for (std::size_t r = 0; r < e.sorted.size(); ++r) {
      (*losses)[r].resize(e.sorted[r]->size());
    }
  }
  double total = 0.0;
  std::vector<std::int32_t> targets;
  std::vector<double> row_loss;
  for (std::size_t t = 0; t < steps; ++t) {
    const Eigen::Index k = e.active[t];
    mix_step(m, author, e, t, head.gate[t], head.mixed[t]);
    Tensor2 logits = affine_forward(m.decoders[author], head.mixed[t]);
    targets.resize(k);
    row_loss.resize(k);
    for (Eigen::Index r = 0; r < k; ++r) targets[r] = e.sorted[r]->target_ids[t];
    softmax_xent_rows(logits, targets, row_loss);
    for (Eigen::Index r = 0; r < k; ++r) {
      total += weight[r] * row_loss[r];
      if (losses) (*losses)[r][t] = row_loss[r];
    }
    if (keep_grad) {
      for (Eigen::Index r = 0; r < k; ++r) {
        logits(r, targets[r]) -= 1.0;
        logits.row(r) *= weight[r];
      }
      head.dlogits[t] = std::move(logits);
    }
#ifndef NDEBUG
    if (!all_finite(head.mixed[t])) {
      throw Error(ErrorCode::ShapeMismatch, "non-finite activation");
    }
#endif
  }
  return total;
}

std::vector<double> position_weights(const Encoded& e, Reduction reduction) {
  std::vector<double> w(e.sorted.size(), 0.0);
  std::size_t nonempty = 0;
  std::size_t positions = 0;
  for (const auto* c : e.sorted) {
    if (c->size() > 0) ++nonempty;
    positions += c->size();
  }
  for (std::size_t r = 0; r < e.sorted.size(); ++r) {
    const std::size_t len = e.sorted[r]->size();
    if (len == 0) continue;
    w[r] = reduction == Reduction::ChunkMean
               ? 1.0 / (static_cast<double>(nonempty) * static_cast<double>(len))
               : 1.0 / static_cast<double>(positions);
  }
  return w;
}

void backward_impl(detail::GraphState& s, MosModel& g, double scale) {
  const MosModel& m = *s.model;
  const std::size_t a = s.author;
  const Encoded& e = s.enc;
  const std::size_t steps = e.active.size();
  const std::size_t S = m.encoders.size();
  const Eigen::Index dh = m.encoders.front().hidden_dim();
  const Eigen::Index de = m.embedding.cols();

  std::vector<std::vector<Tensor2>> dh_out(S, std::vector<Tensor2>(steps));
  std::vector<Tensor2> dx(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const Eigen::Index k = e.active[t];
    const Tensor2 dlogits = s.head.dlogits[t] * scale;
    const Tensor2 dmixed =
        affine_backward(m.decoders[a], s.head.mixed[t], dlogits, g.decoders[a]);
    const Tensor2& gate = s.head.gate[t];
    switch (m.gate_kind) {
      case GateKind::Pinned:
        for (std::size_t j = 0; j < S; ++j) dh_out[j][t] = dmixed;
        dx[t] = zeros(k, de);
        break;
      case GateKind::Scalar: {
        Tensor2 dgate(k, static_cast<Eigen::Index>(S));
        for (std::size_t j = 0; j < S; ++j) {
          const auto jj = static_cast<Eigen::Index>(j);
          const Tensor2& h = e.steps[j][t].h;
          dgate.col(jj) = dmixed.cwiseProduct(h).rowwise().sum();
          dh_out[j][t] = dmixed.array().colwise() * gate.col(jj).array();
        }
        const Tensor2 dz = dgate.array() * gate.array() * (1.0 - gate.array());
        dx[t] = affine_backward(m.gates[a], e.x[t], dz, g.gates[a]);
        break;
      }
      case GateKind::PerDimension: {
        Tensor2 dgate(k, static_cast<Eigen::Index>(S) * dh);
        for (std::size_t j = 0; j < S; ++j) {
          const auto off = static_cast<Eigen::Index>(j) * dh;
          dgate.middleCols(off, dh) = dmixed.cwiseProduct(e.steps[j][t].h);
          dh_out[j][t] = dmixed.cwiseProduct(gate.middleCols(off, dh));
        }
        const Tensor2 dz = dgate.array() * gate.array() * (1.0 - gate.array());
        dx[t] = affine_backward(m.gates[a], e.x[t], dz, g.gates[a]);
        break;
      }
    }
  }

  for (std::size_t j = 0; j < S; ++j) {
    Tensor2 carry_h;
    Tensor2 carry_c;
    for (std::size_t t = steps; t-- > 0;) {
      const Eigen::Index k = e.active[t];
      Tensor2 dh_total = std::move(dh_out[j][t]);
      Tensor2 dc_total = zeros(k, dh);
      if (carry_h.rows() > 0) {
        dh_total.topRows(carry_h.rows()) += carry_h;
        dc_total.topRows(carry_c.rows()) += carry_c;
      }
      const Tensor2 h_prev = t > 0 ? Tensor2(e.steps[j][t - 1].h.topRows(k))
                                   : zeros(k, dh);
      const Tensor2 c_prev = t > 0 ? Tensor2(e.steps[j][t - 1].c.topRows(k))
                                   : zeros(k, dh);
      CellGrad cg = cell_backward(m.encoders[j], e.steps[j][t], e.x[t], h_prev,
                                  c_prev, dh_total, dc_total, g.encoders[j]);
      dx[t] += cg.dx;
      carry_h = std::move(cg.dh_prev);
      carry_c = std::move(cg.dc_prev);
    }
  }

  for (std::size_t t = 0; t < steps; ++t) {
    for (Eigen::Index r = 0; r < e.active[t]; ++r) {
      g.embedding.row(e.sorted[r]->input_ids[t]) += dx[t].row(r);
    }
  }
}

}  // namespace

LossGraph::LossGraph(std::unique_ptr<detail::GraphState> state)
    : state_(std::move(state)) {}
LossGraph::LossGraph(LossGraph&&) noexcept = default;
LossGraph& LossGraph::operator=(LossGraph&&) noexcept = default;
LossGraph::~LossGraph() = default;

double LossGraph::loss() const { return state_->loss; }
const std::vector<double>& LossGraph::per_unit_losses() const {
  return state_->per_unit;
}
std::size_t LossGraph::positions() const { return state_->positions; }

MosModel LossGraph::backward() {
  MosModel g = zeros_like(*state_->model);
  backward_into(g, 1.0);
  return g;
}

void LossGraph::backward_into(MosModel& grads, double scale) {
  if (state_->consumed) {
    throw Error(ErrorCode::GraphConsumed, "backward already ran on this graph");
  }
  state_->consumed = true;
  if (!state_->enc.active.empty()) backward_impl(*state_, grads, scale);
  state_->head = {};
  state_->enc = {};
}

LossGraph record_author_loss(const MosModel& model, std::size_t author,
                             std::span<const TrainingChunk* const> chunks,
                             Reduction reduction) {
  validate(model);
  check_author(model, author);
  auto s = std::make_unique<detail::GraphState>();
  s->model = &model;
  s->author = author;
  s->enc = encode(model, chunks);
  const auto weights = position_weights(s->enc, reduction);
  std::vector<std::vector<double>> losses;
  s->loss = run_head(model, author, s->enc, weights, true, s->head, &losses);
  std::vector<std::vector<double>> by_input(chunks.size());
  for (std::size_t r = 0; r < losses.size(); ++r) {
    by_input[s->enc.original[r]] = std::move(losses[r]);
  }
  for (auto& v : by_input) {
    s->positions += v.size();
    s->per_unit.insert(s->per_unit.end(), v.begin(), v.end());
  }
  return LossGraph(std::move(s));
}

LossGraph record_author_loss(const MosModel& model, std::size_t author,
                             std::span<const TrainingChunk> chunks,
                             Reduction reduction) {
  std::vector<const TrainingChunk*> ptrs;
  ptrs.reserve(chunks.size());
  for (const auto& c : chunks) ptrs.push_back(&c);
  return record_author_loss(model, author, ptrs, reduction);
}

ChunkLoss forward_author(const MosModel& model, std::size_t author,
                         const TrainingChunk& chunk) {
  const TrainingChunk* ptr = &chunk;
  LossGraph g = record_author_loss(model, author, std::span(&ptr, 1),
                                   Reduction::PositionMean);
  return {g.loss(), g.per_unit_losses()};
}

double joint_loss(const MosModel& model, std::span<const AuthorBatch> batches,
                  std::span<const double> weights) {
  return total_loss(model, batches, weights, 0.0, nullptr);
}

double decoder_reg_term(const Affine& decoder, std::span<const Affine> others,
                        std::size_t self, double scale, Affine* grad) {
  double total = 0.0;
  for (std::size_t j = 0; j < others.size(); ++j) {
    if (j == self) continue;
    const Tensor2 dw = decoder.weight - others[j].weight;
    const Tensor2 db = decoder.bias - others[j].bias;
    total += dw.cwiseAbs().sum() + db.cwiseAbs().sum();
    if (grad) {
      grad->weight += scale * dw.unaryExpr([](double v) {
        return static_cast<double>((v > 0.0) - (v < 0.0));
      });
      grad->bias += scale * db.unaryExpr([](double v) {
        return static_cast<double>((v > 0.0) - (v < 0.0));
      });
    }
  }
  return total;
}

double decoder_reg_loss(const MosModel& model, std::size_t author) {
  check_author(model, author);
  if (model.author_count() < 2) return 0.0;
  return decoder_reg_term(model.decoders[author], model.decoders, author, 0.0,
                          nullptr);
}

double mean_decoder_reg(const MosModel& model) {
  const std::size_t n = model.author_count();
  if (n < 2) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += decoder_reg_loss(model, i);
  return total / static_cast<double>(n * (n - 1));
}

double total_loss(const MosModel& model, std::span<const AuthorBatch> batches,
                  std::span<const double> weights, double lambda,
                  MosModel* grads) {
  if (batches.empty()) throw Error(ErrorCode::EmptyBatch, "no mini-batch");
  if (weights.size() != batches.size()) {
    throw Error(ErrorCode::InvalidConfig, "one loss weight per batch required");
  }
  double wsum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) {
      throw Error(ErrorCode::InvalidConfig, "negative loss weight");
    }
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidConfig, "loss weights must sum to 1");
  }
  if (grads) *grads = zeros_like(model);
  double total = 0.0;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    if (batches[i].chunks.empty()) {
      throw Error(ErrorCode::EmptyBatch,
                  "empty mini-batch for author " +
                      std::to_string(batches[i].author));
    }
    LossGraph g = record_author_loss(model, batches[i].author, batches[i].chunks);
    total += weights[i] * g.loss();
    if (grads) g.backward_into(*grads, weights[i]);
  }
  const std::size_t n = model.author_count();
  if (lambda != 0.0 && n >= 2) {
    const double norm = lambda / static_cast<double>(n * (n - 1));
    double reg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      // Each pair appears twice in the double sum, hence the factor 2 on
      // the gradient of author i's own terms.
      reg += decoder_reg_term(model.decoders[i], model.decoders, i, 2.0 * norm,
                              grads ? &grads->decoders[i] : nullptr);
    }
    total += norm * reg;
  }
  return total;
}

double binary_loss(const MosModel& model, std::size_t author,
                   std::span<const TrainingChunk> chunks) {
  validate(model);
  check_author(model, author);
  if (chunks.empty()) throw Error(ErrorCode::EmptyBinary, "binary has no chunk");
  std::vector<const TrainingChunk*> ptrs;
  for (const auto& c : chunks) ptrs.push_back(&c);
  const Encoded e = encode(model, ptrs);
  Head head;
  return run_head(model, author, e, position_weights(e, Reduction::PositionMean),
                  false, head, nullptr);
}

std::vector<double> binary_losses(const MosModel& model,
                                  std::span<const TrainingChunk> chunks) {
  validate(model);
  if (chunks.empty()) throw Error(ErrorCode::EmptyBinary, "binary has no chunk");
  std::vector<const TrainingChunk*> ptrs;
  for (const auto& c : chunks) ptrs.push_back(&c);
  const Encoded e = encode(model, ptrs);
  const auto w = position_weights(e, Reduction::PositionMean);
  std::vector<double> out(model.author_count());
  Head head;
  for (std::size_t a = 0; a < out.size(); ++a) {
    out[a] = run_head(model, a, e, w, false, head, nullptr);
  }
  return out;
}

std::vector<Tensor2> mixed_representations(
    const MosModel& model, std::size_t author,
    std::span<const TrainingChunk* const> chunks) {
  validate(model);
  check_author(model, author);
  const Encoded e = encode(model, chunks);
  const Eigen::Index dh = model.encoders.front().hidden_dim();
  std::vector<Tensor2> out(chunks.size());
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    out[i] = zeros(static_cast<Eigen::Index>(chunks[i]->size()), dh);
  }
  Tensor2 gate;
  Tensor2 mixed;
  for (std::size_t t = 0; t < e.active.size(); ++t) {
    mix_step(model, author, e, t, gate, mixed);
    for (Eigen::Index r = 0; r < e.active[t]; ++r) {
      out[e.original[r]].row(static_cast<Eigen::Index>(t)) = mixed.row(r);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[5] = {'B', 'M', 'L', 'M', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_f64(std::ostream& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw Error(ErrorCode::MalformedInput, "truncated model header");
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) {
    throw Error(ErrorCode::MalformedInput, "truncated model parameters");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

void write_model(std::ostream& out, const MosModel& model, std::uint32_t ngram,
                 std::uint32_t hop) {
  validate(model);
  const ModelShape s = model.shape();
  out.write(kMagic, sizeof kMagic);
  put_u32(out, static_cast<std::uint32_t>(s.vocab));
  put_u32(out, static_cast<std::uint32_t>(s.embed));
  put_u32(out, static_cast<std::uint32_t>(s.hidden));
  put_u32(out, static_cast<std::uint32_t>(s.encoders));
  put_u32(out, static_cast<std::uint32_t>(s.authors));
  put_u32(out, ngram);
  put_u32(out, hop);
  for (const auto& [ref, t] : parameters(model)) {
    for (Eigen::Index i = 0; i < t->size(); ++i) put_f64(out, t->data()[i]);
  }
}

MosModel read_model(std::istream& in, CellKind cell, GateKind gate,
                    ModelHeader* header) {
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) ||
      !std::equal(magic, magic + sizeof magic, kMagic)) {
    throw Error(ErrorCode::MalformedInput, "not a BMLM1 model file");
  }
  ModelHeader h;
  h.vocab = get_u32(in);
  h.embed = get_u32(in);
  h.hidden = get_u32(in);
  h.encoders = get_u32(in);
  h.authors = get_u32(in);
  h.ngram = get_u32(in);
  h.hop = get_u32(in);
  if (header) *header = h;
  ModelShape s;
  s.vocab = h.vocab;
  s.embed = h.embed;
  s.hidden = h.hidden;
  s.encoders = h.encoders;
  s.authors = h.authors;
  s.cell = cell;
  s.gate = gate;
  MosModel m(s);
  for (auto& [ref, t] : parameters(m)) {
    for (Eigen::Index i = 0; i < t->size(); ++i) t->data()[i] = get_f64(in);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::MalformedInput, "trailing bytes after parameters");
  }
  return m;
}

std::size_t ModelBundle::author_index(std::string_view author_id) const {
  for (std::size_t i = 0; i < authors.size(); ++i) {
    if (authors[i] == author_id) return i;
  }
  throw Error(ErrorCode::UnknownAuthor,
              "author '" + std::string(author_id) + "' is not in the model");
}

std::filesystem::path sidecar_path(const std::filesystem::path& model_path) {
  return model_path.string() + ".json";
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
  if (bundle.authors.size() != bundle.model.author_count()) {
    throw Error(ErrorCode::ShapeMismatch, "author list does not match model");
  }
  if (bundle.vocab.size() != bundle.model.vocab_size()) {
    throw Error(ErrorCode::ShapeMismatch, "vocabulary does not match model");
  }
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    write_model(out, bundle.model, static_cast<std::uint32_t>(bundle.trace.ngram),
                static_cast<std::uint32_t>(bundle.trace.hop));
    if (!out) throw Error(ErrorCode::Io, "write failed: " + path.string());
  }
  nlohmann::json authors = nlohmann::json::object();
  for (std::size_t i = 0; i < bundle.authors.size(); ++i) {
    authors[bundle.authors[i]] = i;
  }
  const nlohmann::json side = {
      {"format", "BMLM1"},
      {"authors", authors},
      {"vocabulary", bundle.vocab.tokens()},
      {"cell", std::string(to_string(bundle.model.shape().cell))},
      {"gate", std::string(to_string(bundle.model.gate_kind))},
      {"ngram", bundle.trace.ngram},
      {"hop", bundle.trace.hop},
      {"truncation", bundle.trace.truncation},
  };
  std::ofstream out(sidecar_path(path), std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write sidecar for " + path.string());
  out << side.dump(1) << '\n';
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream side_in(sidecar_path(path), std::ios::binary);
  if (!side_in) {
    throw Error(ErrorCode::MissingFile,
                "missing sidecar " + sidecar_path(path).string());
  }
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(side_in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedInput, std::string("sidecar: ") + e.what());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  ModelBundle b;
  try {
    ModelHeader h;
    b.model = read_model(in, parse_cell_kind(side.value("cell", "lstm")),
                         parse_gate_kind(side.value("gate", "scalar")), &h);
    b.trace.ngram = h.ngram;
    b.trace.hop = h.hop;
    b.trace.truncation = side.value("truncation", std::size_t{20});
    b.vocab = Vocabulary(side.at("vocabulary").get<std::vector<std::string>>());
    b.authors.assign(b.model.author_count(), {});
    for (const auto& [id, idx] : side.at("authors").items()) {
      const auto i = idx.get<std::size_t>();
      if (i >= b.authors.size() || !b.authors[i].empty()) {
        throw Error(ErrorCode::MalformedInput, "bad author index in sidecar");
      }
      b.authors[i] = id;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedInput, std::string("sidecar: ") + e.what());
  }
  if (b.vocab.size() != b.model.vocab_size()) {
    throw Error(ErrorCode::MalformedInput, "sidecar vocabulary size mismatch");
  }
  return b;
}

}  // namespace flowlm
