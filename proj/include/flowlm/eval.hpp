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

#ifndef FLOWLM_EVAL_HPP
#define FLOWLM_EVAL_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "flowlm/cfg.hpp"
#include "json.hpp"

namespace flowlm {

enum class NegativeOrigin { None, InSet, Wild };

std::string_view to_string(NegativeOrigin o);

// Claim that `path` was written by `author_id`.
struct VerificationPair {
  std::string author_id;
  std::string path;
  bool label = false;  // true: the claimed author wrote it
  NegativeOrigin origin = NegativeOrigin::None;
  std::string true_author;

  friend bool operator==(const VerificationPair&, const VerificationPair&) =
      default;
};

// Each positive pair (a candidate and one of its test binaries) gets `ratio`
// negatives claiming the same author. Negative number k of positive p is
// in-set (a test binary of another candidate) when p * ratio + k is even and
// wild otherwise, so odd totals give the extra one to the in-set side. No
// binary repeats within one positive. With `train` given, throws
// MalformedInput if a positive binary is also a training sample of its
// author.
std::vector<VerificationPair> build_pairs(const CorpusManifest& test,
                                          const std::vector<std::string>& candidates,
                                          const CorpusManifest& wild,
                                          std::size_t ratio, std::uint64_t seed,
                                          const CorpusManifest* train = nullptr);

struct ScoredLabel {
  double score = 0.0;  // higher means more likely positive
  bool label = false;
};

// Mann-Whitney AUC, ties credited one half.
double auc_roc(const std::vector<ScoredLabel>& scores);
// Descending score, ties kept in input order.
double average_precision(const std::vector<ScoredLabel>& scores);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

// One point per distinct threshold, starting at (0, 0).
std::vector<RocPoint> roc_curve(const std::vector<ScoredLabel>& scores);
void write_roc_csv(std::ostream& out, const std::vector<RocPoint>& curve);

struct MetricReport {
  double auc_roc = 0.0;
  double ap = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  nlohmann::json config;
};

MetricReport metric_report(const std::vector<ScoredLabel>& scores,
                           nlohmann::json config = nlohmann::json::object());
nlohmann::json to_json(const MetricReport& r);

// Inserts whole functions of the two collaborators (renamed) into a copy of
// `binary` until the original author's opcode share is as close to
// `major_proportion` as possible without going below it. Throws
// ProportionInfeasible when the proportion is outside [0.6, 1] or the
// donors are too small to reach it within 0.05.
Cfg mix_collaborators(const Cfg& binary, const std::vector<Cfg>& collaborators,
                      double major_proportion, std::uint64_t seed);

// Share of opcodes in `mixed` that belong to functions not renamed by
// mix_collaborators.
double original_share(const Cfg& mixed);

// Opcode-n-gram count vector (n = 1..3 inside blocks, plus one token per CFG
// edge joining the two block signatures), L2-normalized.
using SparseVector = std::vector<std::pair<std::string, double>>;  // sorted
SparseVector cosine_features(const Cfg& cfg);
double cosine(const SparseVector& a, const SparseVector& b);

// Scores every pair by the cosine between the sample and the mean of the
// claimed author's training vectors.
std::vector<double> cosine_scores(const CorpusManifest& train,
                                  const std::vector<VerificationPair>& pairs,
                                  CfgStore& store);
MetricReport cosine_baseline(const CorpusManifest& train,
                             const std::vector<VerificationPair>& pairs,
                             CfgStore& store);

// Line-delimited pairs file: {"author_id", "path", "label"} plus optional
// "score", "origin" and "true_author".
struct PairRecord {
  VerificationPair pair;
  std::optional<double> score;
};

std::vector<PairRecord> read_pairs(std::istream& in);
void write_pairs(std::ostream& out, const std::vector<VerificationPair>& pairs);

}  // namespace flowlm

#endif  // FLOWLM_EVAL_HPP
