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

#ifndef FLOWLM_EXPERIMENT_HPP
#define FLOWLM_EXPERIMENT_HPP

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flowlm/cfg.hpp"
#include "flowlm/eval.hpp"
#include "flowlm/synth.hpp"
#include "flowlm/train.hpp"
#include "flowlm/verifier.hpp"
#include "json.hpp"

namespace flowlm {

struct PreparedData {
  Vocabulary vocab;
  std::vector<TrainingChunk> pretrain;
  AuthorCorpus train;
  ExtractionStats stats;
};

// Builds the vocabulary over the pre-training and training n-grams and
// encodes both corpora. Without a pre-training manifest the pooled training
// chunks are used for pre-training.
PreparedData prepare_data(const CorpusManifest& train,
                          const CorpusManifest* pretrain, CfgStore& store,
                          const TrainConfig& cfg);

// Scores pairs against a frozen system, computing each binary's loss array
// once.
class PairScorer {
 public:
  PairScorer(const TrainedSystem& system, const Vocabulary& vocab,
             TraceParams trace, std::vector<std::string> authors,
             CfgStore& store);

  // Fills the cache for `paths`, using up to `threads` workers.
  void prefetch(const std::vector<std::string>& paths, std::size_t threads = 1);
  const LossArray& array(const std::string& path);
  VerificationScore verify(const VerificationPair& pair);
  // -score, so that larger means more likely positive.
  double detection(const VerificationPair& pair);
  const std::vector<std::string>& authors() const { return authors_; }

 private:
  const TrainedSystem& system_;
  const Vocabulary& vocab_;
  TraceParams trace_;
  std::vector<std::string> authors_;
  CfgStore& store_;
  std::map<std::string, LossArray> cache_;
};

std::vector<ScoredLabel> detection_scores(PairScorer& scorer,
                                          const std::vector<VerificationPair>& pairs,
                                          std::size_t threads = 1);

// Bayes-oracle detection scores (likelihood ratio against the generator's
// author prior, estimated over `prior_samples` drawn styles).
std::vector<ScoredLabel> oracle_scores(const SynthCorpus& corpus,
                                       const std::vector<VerificationPair>& pairs,
                                       CfgStore& store,
                                       std::size_t prior_samples = 256);

struct ExperimentOptions {
  std::vector<Architecture> architectures{Architecture::MosOptReg};
  std::vector<std::size_t> ratios{1};
  std::vector<double> proportions;  // collaborator mixing sweep, main arch
  bool oracle = true;
  bool cosine = true;
  std::size_t threads = 1;
};

struct ExperimentResult {
  // Keys: architecture names, "oracle", "cosine"; other ratios append
  // "@ratio=<r>", mixing runs "@mix=<p>".
  std::map<std::string, MetricReport> reports;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

// Generates the corpus in memory, trains every requested architecture from
// one shared pre-trained model and evaluates on pairs built at each ratio.
ExperimentResult run_synthetic(const SynthConfig& synth, const TrainConfig& train,
                               const ExperimentOptions& options,
                               const TrainLog& log = {});

std::string ratio_key(std::string_view base, std::size_t ratio);
std::string mix_key(std::string_view base, double proportion);

}  // namespace flowlm

#endif  // FLOWLM_EXPERIMENT_HPP
