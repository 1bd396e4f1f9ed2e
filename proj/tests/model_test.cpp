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
#include <sstream>
#include <tuple>

#include "flowlm/error.hpp"
#include "flowlm/model.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace flowlm {
namespace {

using testing::random_chunks;
using testing::random_model;

class FullGradient
    : public ::testing::TestWithParam<std::tuple<GateKind, CellKind>> {};

TEST_P(FullGradient, JointLossWithRegularizer) {
  const auto [gate, cell] = GetParam();
  Rng rng(11);
  MosModel m = random_model(rng, 50, 8, 2, 3, gate, cell);
  const auto c0 = random_chunks(rng, 3, 5, 50);
  const auto c1 = random_chunks(rng, 2, 5, 50);
  const auto c2 = random_chunks(rng, 4, 5, 50);
  const std::vector<AuthorBatch> batches = {{0, c0}, {1, c1}, {2, c2}};
  const std::vector<double> w = {0.2, 0.3, 0.5};
  auto f = [&](const MosModel& model, MosModel* g) {
    return total_loss(model, batches, w, 0.05, g);
  };
  const auto check = testing::check_gradients(m, f);
  EXPECT_LE(check.max_rel, 1e-4) << "over " << check.coords << " coordinates";
}

INSTANTIATE_TEST_SUITE_P(
    Kinds, FullGradient,
    ::testing::Combine(::testing::Values(GateKind::Scalar, GateKind::PerDimension,
                                         GateKind::Pinned),
                       ::testing::Values(CellKind::Lstm, CellKind::Tanh)));

TEST(Gradient, PositionMeanReduction) {
  Rng rng(12);
  MosModel m = random_model(rng, 12, 4, 2, 2);
  const auto chunks = random_chunks(rng, 4, 6, 12);
  auto f = [&](const MosModel& model, MosModel* g) {
    LossGraph graph = record_author_loss(model, 1, chunks, Reduction::PositionMean);
    const double l = graph.loss();
    if (g) *g = graph.backward();
    return l;
  };
  EXPECT_LE(testing::check_gradients(m, f).max_rel, 1e-4);
}

TEST(Forward, MatchesScalarOracle) {
  Rng rng(13);
  for (int trial = 0; trial < 120; ++trial) {
    const GateKind gate = static_cast<GateKind>(trial % 3);
    const CellKind cell = trial % 4 == 3 ? CellKind::Tanh : CellKind::Lstm;
    const std::size_t V = 5 + uniform_index(rng, 30);
    MosModel m = random_model(rng, V, 2 + uniform_index(rng, 6),
                              1 + uniform_index(rng, 3), 1 + uniform_index(rng, 3),
                              gate, cell, 0.8);
    const auto chunk = random_chunks(rng, 1, 12, V)[0];
    const std::size_t author = uniform_index(rng, m.author_count());
    const ChunkLoss got = forward_author(m, author, chunk);
    const auto want = oracle::forward_author(m, author, chunk);
    ASSERT_EQ(got.per_unit.size(), want.size());
    double mean = 0.0;
    for (std::size_t t = 0; t < want.size(); ++t) {
      EXPECT_NEAR(got.per_unit[t], want[t], 1e-10);
      mean += want[t] / static_cast<double>(want.size());
    }
    EXPECT_NEAR(got.loss, mean, 1e-10);
  }
}

TEST(Forward, ReductionsAndBatchingAgree) {
  Rng rng(14);
  MosModel m = random_model(rng, 20, 5, 2, 3);
  const auto chunks = random_chunks(rng, 7, 9, 20);
  double chunk_mean = 0.0, pos_sum = 0.0;
  std::size_t positions = 0;
  std::vector<double> units;
  for (const auto& c : chunks) {
    const auto per = oracle::forward_author(m, 2, c);
    double s = 0.0;
    for (double l : per) s += l;
    chunk_mean += s / per.size() / chunks.size();
    pos_sum += s;
    positions += per.size();
    units.insert(units.end(), per.begin(), per.end());
  }
  LossGraph a = record_author_loss(m, 2, chunks, Reduction::ChunkMean);
  LossGraph b = record_author_loss(m, 2, chunks, Reduction::PositionMean);
  EXPECT_NEAR(a.loss(), chunk_mean, 1e-10);
  EXPECT_NEAR(b.loss(), pos_sum / positions, 1e-10);
  EXPECT_EQ(b.positions(), positions);
  ASSERT_EQ(b.per_unit_losses().size(), units.size());
  for (std::size_t i = 0; i < units.size(); ++i) {
    EXPECT_NEAR(b.per_unit_losses()[i], units[i], 1e-10);
  }
  EXPECT_NEAR(binary_loss(m, 2, chunks), pos_sum / positions, 1e-10);
  const auto all = binary_losses(m, chunks);
  for (std::size_t a2 = 0; a2 < 3; ++a2) {
    EXPECT_DOUBLE_EQ(all[a2], binary_loss(m, a2, chunks));
  }
}

TEST(Forward, UniformDecoderGivesLogVocab) {
  Rng rng(15);
  MosModel m = random_model(rng, 37, 6, 3, 2);
  for (auto& d : m.decoders) {
    d.weight.setZero();
    d.bias.setConstant(0.25);
  }
  const auto chunks = random_chunks(rng, 5, 10, 37);
  EXPECT_NEAR(binary_loss(m, 1, chunks), std::log(37.0), 1e-9);
}

TEST(Forward, Errors) {
  Rng rng(16);
  MosModel m = random_model(rng, 10, 4, 2, 2);
  const auto chunks = random_chunks(rng, 2, 4, 10);
  auto code = [](auto fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Io;
  };
  EXPECT_EQ(code([&] { binary_loss(m, 2, chunks); }), ErrorCode::UnknownAuthor);
  EXPECT_EQ(code([&] { binary_loss(m, 0, std::span<const TrainingChunk>{}); }),
            ErrorCode::EmptyBinary);
  auto bad = chunks;
  bad[0].target_ids[0] = 10;
  EXPECT_EQ(code([&] { binary_loss(m, 0, bad); }), ErrorCode::ShapeMismatch);
  const std::vector<AuthorBatch> batches = {{0, chunks}};
  EXPECT_EQ(code([&] { joint_loss(m, batches, std::vector<double>{0.5}); }),
            ErrorCode::InvalidConfig);
  EXPECT_EQ(code([&] { joint_loss(m, {}, {}); }), ErrorCode::EmptyBatch);
  MosModel broken = m;
  broken.decoders[1] = Affine(3, 10);
  EXPECT_EQ(code([&] { validate(broken); }), ErrorCode::ShapeMismatch);
}

TEST(Backward, GraphConsumedOnSecondCall) {
  Rng rng(17);
  MosModel m = random_model(rng, 10, 4, 2, 2);
  const auto chunks = random_chunks(rng, 2, 4, 10);
  LossGraph g = record_author_loss(m, 0, chunks);
  g.backward();
  try {
    g.backward();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GraphConsumed);
  }
}

TEST(Backward, EmptyChunkListGivesZeroGradient) {
  Rng rng(18);
  MosModel m = random_model(rng, 10, 4, 2, 2);
  LossGraph g = record_author_loss(m, 0, std::span<const TrainingChunk>{});
  EXPECT_EQ(g.loss(), 0.0);
  EXPECT_EQ(g.backward(), zeros_like(m));
}

TEST(Backward, OnlyTouchedAuthorAndRowsGetGradient) {
  Rng rng(19);
  MosModel m = random_model(rng, 30, 4, 2, 3);
  TrainingChunk c;
  c.input_ids = {3, 4};
  c.target_ids = {5, 6};
  const std::vector<TrainingChunk> chunks = {c};
  MosModel g = record_author_loss(m, 1, chunks).backward();
  for (std::size_t a : {0u, 2u}) {
    EXPECT_TRUE(g.decoders[a].weight.isZero(0.0));
    EXPECT_TRUE(g.gates[a].weight.isZero(0.0));
  }
  for (Eigen::Index r = 0; r < 30; ++r) {
    if (r == 3 || r == 4) continue;
    EXPECT_TRUE(g.embedding.row(r).isZero(0.0));
  }
  EXPECT_FALSE(g.decoders[1].weight.isZero(0.0));
}

TEST(Regularizer, ClosedFormAndOracle) {
  Rng rng(20);
  MosModel m = random_model(rng, 9, 3, 2, 4);
  MosModel same = m;
  for (auto& d : same.decoders) d = same.decoders[0];
  for (std::size_t a = 0; a < 4; ++a) EXPECT_EQ(decoder_reg_loss(same, a), 0.0);
  EXPECT_EQ(mean_decoder_reg(same), 0.0);

  double mean = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    double want = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      if (i == j) continue;
      for (Eigen::Index k = 0; k < m.decoders[i].weight.size(); ++k) {
        want += std::abs(m.decoders[i].weight.data()[k] - m.decoders[j].weight.data()[k]);
      }
      for (Eigen::Index k = 0; k < m.decoders[i].bias.size(); ++k) {
        want += std::abs(m.decoders[i].bias.data()[k] - m.decoders[j].bias.data()[k]);
      }
    }
    EXPECT_NEAR(decoder_reg_loss(m, i), want, 1e-12);
    mean += want / 12.0;
  }
  EXPECT_NEAR(mean_decoder_reg(m), mean, 1e-12);
  MosModel single = random_model(rng, 9, 3, 2, 1);
  EXPECT_EQ(decoder_reg_loss(single, 0), 0.0);
}

TEST(Regularizer, TotalLossAddsScaledMean) {
  Rng rng(21);
  MosModel m = random_model(rng, 9, 3, 2, 3);
  const auto c = random_chunks(rng, 3, 4, 9);
  const std::vector<AuthorBatch> batches = {{0, c}, {2, c}};
  const std::vector<double> w = {0.5, 0.5};
  EXPECT_NEAR(total_loss(m, batches, w, 0.3),
              joint_loss(m, batches, w) + 0.3 * mean_decoder_reg(m), 1e-12);
}

TEST(Mixed, RepresentationReproducesLoss) {
  Rng rng(22);
  MosModel m = random_model(rng, 15, 4, 3, 2, GateKind::PerDimension);
  const auto chunks = random_chunks(rng, 4, 7, 15);
  std::vector<const TrainingChunk*> ptrs;
  for (const auto& c : chunks) ptrs.push_back(&c);
  const auto reps = mixed_representations(m, 1, ptrs);
  ASSERT_EQ(reps.size(), chunks.size());
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    const Tensor2 logits = affine_forward(m.decoders[1], reps[i]);
    const auto want = oracle::forward_author(m, 1, chunks[i]);
    for (std::size_t t = 0; t < want.size(); ++t) {
      std::vector<double> row(logits.row(t).data(), logits.row(t).data() + logits.cols());
      EXPECT_NEAR(softmax_xent(row, chunks[i].target_ids[t]).loss, want[t], 1e-10);
    }
  }
}

TEST(Pretrain, ConversionRoundTrip) {
  Rng rng(23);
  PretrainModel p = make_pretrain_model(20, 5, 6, CellKind::Lstm, rng);
  MosModel m = as_mos(p);
  EXPECT_EQ(m.encoder_count(), 1u);
  EXPECT_EQ(m.author_count(), 1u);
  EXPECT_EQ(m.gate_kind, GateKind::Pinned);
  EXPECT_EQ(as_pretrain(m), p);
  EXPECT_THROW(as_pretrain(random_model(rng, 20, 5, 2, 1)), Error);
}

TEST(Serialize, ModelRoundTripIsExact) {
  Rng rng(24);
  for (GateKind gate : {GateKind::Scalar, GateKind::PerDimension, GateKind::Pinned}) {
    MosModel m = random_model(rng, 17, 5, 3, 4, gate);
    std::stringstream buf;
    write_model(buf, m, 3, 2);
    const std::string bytes = buf.str();
    EXPECT_EQ(bytes.substr(0, 5), "BMLM1");
    ModelHeader hdr;
    MosModel back = read_model(buf, CellKind::Lstm, gate, &hdr);
    EXPECT_EQ(back, m);
    EXPECT_EQ(hdr.vocab, 17u);
    EXPECT_EQ(hdr.authors, 4u);
    EXPECT_EQ(hdr.ngram, 3u);
    EXPECT_EQ(hdr.hop, 2u);
    std::stringstream again;
    write_model(again, back, 3, 2);
    EXPECT_EQ(again.str(), bytes);
  }
  std::stringstream junk("BMLM0xxxx");
  EXPECT_THROW(read_model(junk, CellKind::Lstm, GateKind::Scalar), Error);
}

TEST(Serialize, BundleRoundTrip) {
  testing::TempDir dir("bundle");
  Rng rng(25);
  ModelBundle b;
  b.model = random_model(rng, 4, 3, 2, 2, GateKind::Scalar, CellKind::Tanh);
  b.vocab = Vocabulary({"<unk>", "a|b", "b|c", "c|d"});
  b.authors = {"alice", "bob"};
  b.trace = {2, 1, 7};
  const auto path = dir.path() / "m.bmlm";
  save_bundle(b, path);
  EXPECT_TRUE(std::filesystem::exists(sidecar_path(path)));
  ModelBundle back = load_bundle(path);
  EXPECT_EQ(back.model, b.model);
  EXPECT_EQ(back.vocab, b.vocab);
  EXPECT_EQ(back.authors, b.authors);
  EXPECT_EQ(back.trace.ngram, 2u);
  EXPECT_EQ(back.trace.hop, 1u);
  EXPECT_EQ(back.trace.truncation, 7u);
  EXPECT_EQ(back.author_index("bob"), 1u);
  EXPECT_THROW(back.author_index("carol"), Error);
}

TEST(Init, RandomInitIsSeededAndBounded) {
  ModelShape s;
  s.vocab = 11;
  s.embed = 3;
  s.hidden = 4;
  s.encoders = 2;
  s.authors = 2;
  MosModel a(s), b(s);
  Rng r1(5), r2(5);
  init_random(a, r1, 0.1);
  init_random(b, r2, 0.1);
  EXPECT_EQ(a, b);
  for (const auto& [ref, t] : parameters(a)) EXPECT_LE(t->cwiseAbs().maxCoeff(), 0.1);
  EXPECT_EQ(a.shape(), s);
  EXPECT_EQ(s.gate_width(), 2u);
  s.gate = GateKind::PerDimension;
  EXPECT_EQ(s.gate_width(), 8u);
}

}  // namespace
}  // namespace flowlm
