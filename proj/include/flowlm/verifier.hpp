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

#ifndef FLOWLM_VERIFIER_HPP
#define FLOWLM_VERIFIER_HPP

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "flowlm/cfg.hpp"
#include "flowlm/model.hpp"
#include "flowlm/trace.hpp"
#include "flowlm/train.hpp"

namespace flowlm {

// Per-author mean losses of one binary, in model author order.
struct LossArray {
  std::string binary_id;
  std::vector<double> losses;
};

// Lower score means the author more likely wrote the binary.
struct VerificationScore {
  double score = 0.0;
  double loss = 0.0;
  double avg = 0.0;
  double var = 0.0;
  bool degenerate = false;
  std::size_t author_index = 0;
  std::string author_id;
  std::string binary_id;
};

inline constexpr double kDegenerateVariance = 1e-12;

LossArray loss_array(const MosModel& model, const Cfg& binary,
                     const Vocabulary& vocab, const TraceParams& trace);
// Naive variant: one independent single-author model per candidate.
LossArray loss_array(std::span<const MosModel> separate, const Cfg& binary,
                     const Vocabulary& vocab, const TraceParams& trace);
LossArray loss_array(const TrainedSystem& system, const Cfg& binary,
                     const Vocabulary& vocab, const TraceParams& trace);

// (l_i - Avg(L)) / Var(L) with the population variance. A variance below
// kDegenerateVariance yields score 0 and sets `degenerate`. Throws
// SingleAuthor when L has fewer than two entries.
VerificationScore score(std::size_t author, const LossArray& array);

// Index of the smallest loss.
std::size_t best_author(const LossArray& array);

}  // namespace flowlm

#endif  // FLOWLM_VERIFIER_HPP
