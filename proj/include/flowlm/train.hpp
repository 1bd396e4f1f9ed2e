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

#ifndef FLOWLM_TRAIN_HPP
#define FLOWLM_TRAIN_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowlm/cfg.hpp"
#include "flowlm/model.hpp"
#include "flowlm/nn.hpp"
#include "flowlm/trace.hpp"

namespace flowlm {

// Hyperparameters of the whole pipeline. Defaults follow the published
// setting where one exists (hidden 64, five encoders, Adam at 1e-2, lambda
// 1e-4, truncation 20, 5-grams with 3 hops).
struct TrainConfig {
  std::size_t ngram = 5;
  std::size_t hop = 3;
  std::size_t truncation = 20;
  std::size_t hidden = 64;  // embedding and encoder width
  std::size_t encoders = 5;
  double learning_rate = 1e-2;
  double lambda = 1e-4;
  std::size_t vocab_cap = 20000;
  std::size_t batch_size = 32;
  std::size_t pretrain_epochs = 20;
  std::size_t joint_epochs = 30;
  std::size_t finetune_epochs = 10;
  double heldout_fraction = 0.1;
  std::size_t patience = 3;
  double symmetry_break_eps = 1e-3;
  bool rescale_decoder = true;
  double init_limit = 0.08;
  CellKind cell = CellKind::Lstm;
  GateKind gate = GateKind::Scalar;
  std::vector<double> loss_weights;  // empty: uniform over authors
  std::uint64_t seed = 0;

  TraceParams trace() const { return {ngram, hop, truncation}; }
  AdamConfig adam() const;

  // Throws InvalidConfig.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json to_json(const TrainConfig& cfg);
// Applies the keys of `doc` over `base`. Unknown keys are rejected with
// InvalidConfig.
TrainConfig apply_json(const nlohmann::json& doc, TrainConfig base = {});

struct LogRecord {
  std::string stage;
  std::size_t epoch = 0;
  std::optional<std::string> author;
  double loss = 0.0;
  std::optional<double> heldout;
};

using TrainLog = std::function<void(const LogRecord&)>;

// Line-delimited JSON sink: {"stage","epoch","author"?,"loss","heldout"?}.
TrainLog jsonl_log(std::ostream& out);

// Adam over every parameter of a model, one moment pair per tensor.
class ModelOptimizer {
 public:
  ModelOptimizer(const MosModel& model, AdamConfig config);

  // Updates the parameters selected by `select`; the others keep both their
  // values and their Adam state.
  void step(MosModel& model, const MosModel& grads,
            const std::function<bool(const ParamRef&)>& select);

  const AdamState& state(std::size_t index) const { return states_[index]; }

 private:
  AdamConfig config_;
  std::vector<AdamState> states_;
};

// Chunks of every author in manifest order.
struct AuthorCorpus {
  std::vector<std::string> authors;
  std::vector<std::vector<TrainingChunk>> chunks;

  std::size_t total_chunks() const;
};

std::vector<NgramSequence> manifest_ngrams(const CorpusManifest& manifest,
                                           CfgStore& store, std::size_t n);

AuthorCorpus encode_manifest(const CorpusManifest& manifest, CfgStore& store,
                             const Vocabulary& vocab, const TraceParams& trace,
                             ExtractionStats* stats = nullptr);

// Mean chunk loss of author `author` over `chunks` (evaluated in slices).
double mean_chunk_loss(const MosModel& model, std::size_t author,
                       std::span<const TrainingChunk> chunks,
                       Reduction reduction = Reduction::ChunkMean);

// External pre-training of a single-encoder language model. A random
// held-out slice drives early stopping; the best held-out model is
// returned. Throws EmptyCorpus.
PretrainModel pretrain(std::span<const TrainingChunk> corpus,
                       std::size_t vocab_size, const TrainConfig& cfg,
                       const TrainLog& log = {});

// Copies the pre-trained embedding into a mixture model, perturbs each copy
// of the encoder by uniform(-eps, eps), copies the decoder to every author
// (scaled by 2/s when rescale_decoder is set, 1/s for pinned gates) and
// zeroes the gates.
MosModel init_from_pretrained(const PretrainModel& pre, std::size_t n_authors,
                              const TrainConfig& cfg);

// One optimizer step on author `author`'s mini-batch: shared layers plus
// that author's gate and decoder. Returns the batch loss.
double joint_step(MosModel& model, ModelOptimizer& optimizer,
                  MosModel& grad_buffer, std::size_t author,
                  std::span<const TrainingChunk* const> batch);

MosModel joint_train(MosModel model,
                     std::span<const std::vector<TrainingChunk>> per_author,
                     const TrainConfig& cfg, const TrainLog& log = {});

// Trains only the decoders, author by author, on frozen shared layers and
// gates. Author i minimizes L_i + lambda * 2 / (n - 1) * sum_j |D_i - D_j|_1
// with the other decoders held at their pre-fine-tuning values.
MosModel finetune(MosModel model,
                  std::span<const std::vector<TrainingChunk>> per_author,
                  const TrainConfig& cfg, const TrainLog& log = {});

// Model variants compared by the ablation grid.
enum class Architecture { Naive, SingleEncoder, Mos, MosOpt, MosOptReg };

std::string_view to_string(Architecture arch);
Architecture parse_architecture(std::string_view text);
const std::vector<Architecture>& all_architectures();

// Either one shared mixture model or, for Naive, one independent language
// model per author.
struct TrainedSystem {
  Architecture architecture = Architecture::MosOptReg;
  MosModel shared;
  std::vector<MosModel> separate;
  std::optional<MosModel> after_joint;  // mixture variants only

  std::size_t author_count() const;
};

// Naive variant: each author fine-tunes its own copy of the pre-trained
// model for `joint_epochs`.
std::vector<MosModel> train_separate(
    const PretrainModel& pre,
    std::span<const std::vector<TrainingChunk>> per_author,
    const TrainConfig& cfg, const TrainLog& log = {});

TrainedSystem train_system(Architecture arch, const PretrainModel& pre,
                           std::span<const std::vector<TrainingChunk>> per_author,
                           const TrainConfig& cfg, const TrainLog& log = {});

}  // namespace flowlm

#endif  // FLOWLM_TRAIN_HPP
