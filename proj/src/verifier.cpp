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

#include "flowlm/verifier.hpp"

#include <algorithm>
#include <cmath>

#include "flowlm/error.hpp"

namespace flowlm {

namespace {

std::vector<TrainingChunk> chunks_of(const Cfg& binary, const Vocabulary& vocab,
                                     const TraceParams& trace) {
  auto chunks = encode_binary(binary, vocab, trace);
  if (chunks.empty()) {
    throw Error(ErrorCode::EmptyBinary,
                "binary '" + binary.binary_id + "' yields no chunk");
  }
  return chunks;
}

}  // namespace

LossArray loss_array(const MosModel& model, const Cfg& binary,
                     const Vocabulary& vocab, const TraceParams& trace) {
  const auto chunks = chunks_of(binary, vocab, trace);
  return {binary.binary_id, binary_losses(model, chunks)};
}

LossArray loss_array(std::span<const MosModel> separate, const Cfg& binary,
                     const Vocabulary& vocab, const TraceParams& trace) {
  const auto chunks = chunks_of(binary, vocab, trace);
  LossArray out{binary.binary_id, {}};
  for (const auto& m : separate) out.losses.push_back(binary_loss(m, 0, chunks));
  return out;
}

LossArray loss_array(const TrainedSystem& system, const Cfg& binary,
                     const Vocabulary& vocab, const TraceParams& trace) {
  if (system.architecture == Architecture::Naive) {
    return loss_array(system.separate, binary, vocab, trace);
  }
  return loss_array(system.shared, binary, vocab, trace);
}

VerificationScore score(std::size_t author, const LossArray& array) {
  const auto& l = array.losses;
  if (l.size() < 2) {
    throw Error(ErrorCode::SingleAuthor,
                "verification score needs at least two candidate authors");
  }
  if (author >= l.size()) {
    throw Error(ErrorCode::UnknownAuthor,
                "author index " + std::to_string(author) + " out of range");
  }
  const double n = static_cast<double>(l.size());
  double avg = 0.0;
  for (double x : l) avg += x;
  avg /= n;
  double var = 0.0;
  for (double x : l) var += (x - avg) * (x - avg);
  var /= n;
  VerificationScore s;
  s.loss = l[author];
  s.avg = avg;
  s.var = var;
  s.author_index = author;
  s.binary_id = array.binary_id;
  if (var < kDegenerateVariance) {
    s.degenerate = true;
  } else {
    s.score = (l[author] - avg) / var;
  }
  return s;
}

std::size_t best_author(const LossArray& array) {
  if (array.losses.empty()) {
    throw Error(ErrorCode::EmptyBatch, "empty loss array");
  }
  return static_cast<std::size_t>(
      std::min_element(array.losses.begin(), array.losses.end()) -
      array.losses.begin());
}

}  // namespace flowlm
