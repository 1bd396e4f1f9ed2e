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

#include "flowlm/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "flowlm/error.hpp"
#include "flowlm/random.hpp"

namespace flowlm {

namespace {

// Stream tags for derive_seed.
enum SeedTag : std::uint64_t {
  kPretrainInit = 1,
  kPretrainSplit,
  kPretrainShuffle,
  kSymmetryBreak,
  kJointSampling,
  kFinetuneShuffle,
  kSeparateShuffle,
};

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorCode::InvalidConfig, what);
}

std::vector<const TrainingChunk*> pointers(std::span<const TrainingChunk> v) {
  std::vector<const TrainingChunk*> out;
  out.reserve(v.size());
  for (const auto& c : v) out.push_back(&c);
  return out;
}

std::size_t batch_count(std::size_t n, std::size_t batch) {
  return (n + batch - 1) / batch;
}

}  // namespace

AdamConfig TrainConfig::adam() const {
  AdamConfig a;
  a.learning_rate = learning_rate;
  return a;
}

void TrainConfig::validate() const {
  if (ngram == 0 || hop == 0 || truncation == 0) {
    invalid("ngram, hop and truncation must be positive");
  }
  if (hidden == 0 || encoders == 0 || vocab_cap == 0 || batch_size == 0) {
    invalid("hidden, encoders, vocab_cap and batch_size must be positive");
  }
  if (!(learning_rate > 0.0)) invalid("learning_rate must be positive");
  if (!(lambda >= 0.0)) invalid("lambda must be non-negative");
  if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0)) {
    invalid("heldout_fraction must be in [0, 1)");
  }
  if (!(symmetry_break_eps >= 0.0)) invalid("symmetry_break_eps must be >= 0");
  if (!(init_limit > 0.0)) invalid("init_limit must be positive");
  for (double w : loss_weights) {
    if (!(w >= 0.0)) invalid("loss weights must be non-negative");
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"ngram", c.ngram},
      {"hop", c.hop},
      {"truncation", c.truncation},
      {"hidden", c.hidden},
      {"encoders", c.encoders},
      {"learning_rate", c.learning_rate},
      {"lambda", c.lambda},
      {"vocab_cap", c.vocab_cap},
      {"batch_size", c.batch_size},
      {"pretrain_epochs", c.pretrain_epochs},
      {"joint_epochs", c.joint_epochs},
      {"finetune_epochs", c.finetune_epochs},
      {"heldout_fraction", c.heldout_fraction},
      {"patience", c.patience},
      {"symmetry_break_eps", c.symmetry_break_eps},
      {"rescale_decoder", c.rescale_decoder},
      {"init_limit", c.init_limit},
      {"cell", std::string(to_string(c.cell))},
      {"gate", std::string(to_string(c.gate))},
      {"loss_weights", c.loss_weights},
      {"seed", c.seed},
  };
}

TrainConfig apply_json(const nlohmann::json& doc, TrainConfig c) {
  if (!doc.is_object()) invalid("training config must be a JSON object");
  try {
    for (const auto& [key, v] : doc.items()) {
      if (key == "ngram") c.ngram = v.get<std::size_t>();
      else if (key == "hop") c.hop = v.get<std::size_t>();
      else if (key == "truncation") c.truncation = v.get<std::size_t>();
      else if (key == "hidden") c.hidden = v.get<std::size_t>();
      else if (key == "encoders") c.encoders = v.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "lambda") c.lambda = v.get<double>();
      else if (key == "vocab_cap") c.vocab_cap = v.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "pretrain_epochs") c.pretrain_epochs = v.get<std::size_t>();
      else if (key == "joint_epochs") c.joint_epochs = v.get<std::size_t>();
      else if (key == "finetune_epochs") c.finetune_epochs = v.get<std::size_t>();
      else if (key == "heldout_fraction") c.heldout_fraction = v.get<double>();
      else if (key == "patience") c.patience = v.get<std::size_t>();
      else if (key == "symmetry_break_eps") c.symmetry_break_eps = v.get<double>();
      else if (key == "rescale_decoder") c.rescale_decoder = v.get<bool>();
      else if (key == "init_limit") c.init_limit = v.get<double>();
      else if (key == "cell") c.cell = parse_cell_kind(v.get<std::string>());
      else if (key == "gate") c.gate = parse_gate_kind(v.get<std::string>());
      else if (key == "loss_weights") c.loss_weights = v.get<std::vector<double>>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else invalid("unknown training config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    invalid(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainLog jsonl_log(std::ostream& out) {
  return [&out](const LogRecord& r) {
    nlohmann::json j = {{"stage", r.stage}, {"epoch", r.epoch}};
    if (r.author) j["author"] = *r.author;
    j["loss"] = r.loss;
    if (r.heldout) j["heldout"] = *r.heldout;
    out << j.dump() << '\n';
  };
}

ModelOptimizer::ModelOptimizer(const MosModel& model, AdamConfig config)
    : config_(config) {
  for (const auto& [ref, t] : parameters(model)) states_.emplace_back(*t);
}

void ModelOptimizer::step(MosModel& model, const MosModel& grads,
                          const std::function<bool(const ParamRef&)>& select) {
  auto params = parameters(model);
  const auto gs = parameters(grads);
  if (params.size() != states_.size() || gs.size() != states_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "optimizer built for another model");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!select(params[i].first)) continue;
    adam_step(*params[i].second, *gs[i].second, states_[i], config_);
  }
}

std::size_t AuthorCorpus::total_chunks() const {
  std::size_t n = 0;
  for (const auto& c : chunks) n += c.size();
  return n;
}

std::vector<NgramSequence> manifest_ngrams(const CorpusManifest& manifest,
                                           CfgStore& store, std::size_t n) {
  std::vector<NgramSequence> out;
  for (const auto& a : manifest.authors) {
    for (const auto& path : a.samples) {
      auto seqs = ngram_sequences(store.get(path), n);
      std::move(seqs.begin(), seqs.end(), std::back_inserter(out));
    }
  }
  return out;
}

AuthorCorpus encode_manifest(const CorpusManifest& manifest, CfgStore& store,
                             const Vocabulary& vocab, const TraceParams& trace,
                             ExtractionStats* stats) {
  AuthorCorpus corpus;
  for (const auto& a : manifest.authors) {
    corpus.authors.push_back(a.author_id);
    std::vector<TrainingChunk> chunks;
    for (const auto& path : a.samples) {
      auto c = encode_binary(store.get(path), vocab, trace, stats);
      for (auto& ch : c) ch.author_id = a.author_id;
      std::move(c.begin(), c.end(), std::back_inserter(chunks));
    }
    corpus.chunks.push_back(std::move(chunks));
  }
  return corpus;
}

double mean_chunk_loss(const MosModel& model, std::size_t author,
                       std::span<const TrainingChunk> chunks,
                       Reduction reduction) {
  if (chunks.empty()) return 0.0;
  constexpr std::size_t kSlice = 256;
  double weighted = 0.0;
  double total_weight = 0.0;
  for (std::size_t b = 0; b < chunks.size(); b += kSlice) {
    const auto slice = chunks.subspan(b, std::min(kSlice, chunks.size() - b));
    LossGraph g = record_author_loss(model, author, slice, reduction);
    const double w = reduction == Reduction::ChunkMean
                         ? static_cast<double>(slice.size())
                         : static_cast<double>(g.positions());
    weighted += w * g.loss();
    total_weight += w;
  }
  return total_weight > 0.0 ? weighted / total_weight : 0.0;
}

PretrainModel pretrain(std::span<const TrainingChunk> corpus,
                       std::size_t vocab_size, const TrainConfig& cfg,
                       const TrainLog& log) {
  cfg.validate();
  if (corpus.empty()) {
    throw Error(ErrorCode::EmptyCorpus, "pre-training corpus has no chunk");
  }
  Rng init_rng(derive_seed(cfg.seed, kPretrainInit));
  MosModel model = as_mos(make_pretrain_model(vocab_size, cfg.hidden,
                                              cfg.hidden, cfg.cell, init_rng,
                                              cfg.init_limit));
  if (cfg.pretrain_epochs == 0) return as_pretrain(model);

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(derive_seed(cfg.seed, kPretrainSplit));
  shuffle(order, split_rng);
  const auto n_heldout =
      corpus.size() >= 10
          ? static_cast<std::size_t>(cfg.heldout_fraction *
                                     static_cast<double>(corpus.size()))
          : std::size_t{0};
  std::vector<TrainingChunk> heldout;
  std::vector<const TrainingChunk*> train;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < n_heldout) heldout.push_back(corpus[order[i]]);
    else train.push_back(&corpus[order[i]]);
  }
  std::sort(train.begin(), train.end());  // shuffle below fixes the order

  ModelOptimizer opt(model, cfg.adam());
  MosModel grads = zeros_like(model);
  Rng rng(derive_seed(cfg.seed, kPretrainShuffle));
  auto all = [](const ParamRef&) { return true; };

  MosModel best = model;
  double best_heldout = heldout.empty() ? 0.0 : mean_chunk_loss(model, 0, heldout);
  if (log) {
    std::vector<TrainingChunk> probe;
    for (const auto* c : train) probe.push_back(*c);
    LogRecord r{"pretrain", 0, std::nullopt, mean_chunk_loss(model, 0, probe), {}};
    if (!heldout.empty()) r.heldout = best_heldout;
    log(r);
  }
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
    shuffle(train, rng);
    double sum = 0.0;
    const std::size_t nb = batch_count(train.size(), cfg.batch_size);
    for (std::size_t b = 0; b < nb; ++b) {
      const std::size_t begin = b * cfg.batch_size;
      const std::size_t end = std::min(begin + cfg.batch_size, train.size());
      for (auto& [ref, t] : parameters(grads)) t->setZero();
      LossGraph g = record_author_loss(
          model, 0, std::span(train).subspan(begin, end - begin));
      sum += g.loss();
      g.backward_into(grads);
      opt.step(model, grads, all);
    }
    LogRecord r{"pretrain", epoch, std::nullopt,
                nb ? sum / static_cast<double>(nb) : 0.0, {}};
    if (!heldout.empty()) {
      const double h = mean_chunk_loss(model, 0, heldout);
      r.heldout = h;
      if (h < best_heldout) {
        best_heldout = h;
        best = model;
        stale = 0;
      } else {
        ++stale;
      }
    } else {
      best = model;
    }
    if (log) log(r);
    if (!heldout.empty() && stale >= cfg.patience) break;
  }
  return as_pretrain(best);
}

MosModel init_from_pretrained(const PretrainModel& pre, std::size_t n_authors,
                              const TrainConfig& cfg) {
  cfg.validate();
  if (n_authors == 0) invalid("mixture model needs at least one author");
  if (pre.embedding.cols() != static_cast<Eigen::Index>(cfg.hidden) ||
      pre.encoder.hidden_dim() != static_cast<Eigen::Index>(cfg.hidden) ||
      pre.encoder.kind != cfg.cell) {
    throw Error(ErrorCode::ShapeMismatch,
                "pre-trained model does not match the configured dimensions");
  }
  ModelShape shape;
  shape.vocab = static_cast<std::size_t>(pre.embedding.rows());
  shape.embed = cfg.hidden;
  shape.hidden = cfg.hidden;
  shape.encoders = cfg.encoders;
  shape.authors = n_authors;
  shape.cell = cfg.cell;
  shape.gate = cfg.gate;
  MosModel m(shape);
  m.embedding = pre.embedding;
  Rng rng(derive_seed(cfg.seed, kSymmetryBreak));
  for (auto& enc : m.encoders) {
    enc = pre.encoder;
    if (cfg.symmetry_break_eps > 0.0) {
      for (Tensor2* t : {&enc.input_weights, &enc.recurrent_weights, &enc.bias}) {
        for (Eigen::Index i = 0; i < t->size(); ++i) {
          t->data()[i] +=
              uniform(rng, -cfg.symmetry_break_eps, cfg.symmetry_break_eps);
        }
      }
    }
  }
  // Zero gates give every encoder weight 0.5, so the mixed state is about
  // s/2 times the pre-trained one; pinned gates give exactly s times.
  double scale = 1.0;
  if (cfg.rescale_decoder) {
    const double s = static_cast<double>(cfg.encoders);
    scale = cfg.gate == GateKind::Pinned ? 1.0 / s : 2.0 / s;
  }
  for (auto& d : m.decoders) {
    d = pre.decoder;
    d.weight *= scale;
  }
  validate(m);
  return m;
}

double joint_step(MosModel& model, ModelOptimizer& optimizer,
                  MosModel& grad_buffer, std::size_t author,
                  std::span<const TrainingChunk* const> batch) {
  auto touched = [author](const ParamRef& r) {
    return r.shared() || r.owner == author;
  };
  for (auto& [ref, t] : parameters(grad_buffer)) {
    if (touched(ref)) t->setZero();
  }
  LossGraph g = record_author_loss(model, author, batch);
  const double loss = g.loss();
  g.backward_into(grad_buffer);
  optimizer.step(model, grad_buffer, touched);
  return loss;
}

MosModel joint_train(MosModel model,
                     std::span<const std::vector<TrainingChunk>> per_author,
                     const TrainConfig& cfg, const TrainLog& log) {
  cfg.validate();
  validate(model);
  const std::size_t n = model.author_count();
  if (per_author.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "one chunk list per author required");
  }
  std::size_t total = 0;
  for (std::size_t a = 0; a < n; ++a) {
    if (per_author[a].empty()) {
      throw Error(ErrorCode::EmptyAuthor,
                  "author " + std::to_string(a) + " has no training chunk");
    }
    total += per_author[a].size();
  }
  std::vector<double> weights = cfg.loss_weights;
  if (weights.empty()) weights.assign(n, 1.0 / static_cast<double>(n));
  if (weights.size() != n) invalid("loss_weights needs one entry per author");

  Rng rng(derive_seed(cfg.seed, kJointSampling));
  std::vector<std::vector<const TrainingChunk*>> queues(n);
  std::vector<std::size_t> cursor(n, 0);
  for (std::size_t a = 0; a < n; ++a) {
    queues[a] = pointers(per_author[a]);
    shuffle(queues[a], rng);
  }
  ModelOptimizer opt(model, cfg.adam());
  MosModel grads = zeros_like(model);
  const std::size_t iterations = batch_count(total, cfg.batch_size);
  for (std::size_t epoch = 1; epoch <= cfg.joint_epochs; ++epoch) {
    double sum = 0.0;
    for (std::size_t it = 0; it < iterations; ++it) {
      const std::size_t a = sample_discrete(weights, rng);
      auto& q = queues[a];
      if (cursor[a] >= q.size()) {
        shuffle(q, rng);
        cursor[a] = 0;
      }
      const std::size_t take = std::min(cfg.batch_size, q.size() - cursor[a]);
      sum += joint_step(model, opt, grads, a,
                        std::span(q).subspan(cursor[a], take));
      cursor[a] += take;
    }
    if (log) {
      log({"joint", epoch, std::nullopt,
           iterations ? sum / static_cast<double>(iterations) : 0.0, {}});
    }
  }
  return model;
}

namespace {

// Decoder-only objective on cached mixed representations of one batch.
double decoder_batch(const Affine& decoder,
                     std::span<const Tensor2* const> mixed,
                     std::span<const TrainingChunk* const> chunks,
                     Affine& grad) {
  Eigen::Index rows = 0;
  for (const auto* m : mixed) rows += m->rows();
  if (rows == 0) return 0.0;
  Tensor2 stacked(rows, decoder.in_dim());
  std::vector<std::int32_t> targets;
  std::vector<double> weight;
  targets.reserve(rows);
  weight.reserve(rows);
  Eigen::Index r = 0;
  std::size_t nonempty = 0;
  for (const auto* c : chunks) nonempty += c->size() > 0;
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    const auto len = mixed[i]->rows();
    if (len == 0) continue;
    stacked.middleRows(r, len) = *mixed[i];
    r += len;
    for (Eigen::Index t = 0; t < len; ++t) {
      targets.push_back(chunks[i]->target_ids[t]);
      weight.push_back(1.0 / (static_cast<double>(nonempty) *
                              static_cast<double>(len)));
    }
  }
  Tensor2 logits = affine_forward(decoder, stacked);
  std::vector<double> losses(rows);
  softmax_xent_rows(logits, targets, losses);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    loss += weight[i] * losses[i];
    logits(i, targets[i]) -= 1.0;
    logits.row(i) *= weight[i];
  }
  grad.weight.noalias() += logits.transpose() * stacked;
  grad.bias += logits.colwise().sum();
  return loss;
}

}  // namespace

MosModel finetune(MosModel model,
                  std::span<const std::vector<TrainingChunk>> per_author,
                  const TrainConfig& cfg, const TrainLog& log) {
  cfg.validate();
  validate(model);
  const std::size_t n = model.author_count();
  if (per_author.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "one chunk list per author required");
  }
  for (std::size_t a = 0; a < n; ++a) {
    if (per_author[a].empty()) {
      throw Error(ErrorCode::EmptyAuthor,
                  "author " + std::to_string(a) + " has no training chunk");
    }
  }
  if (cfg.finetune_epochs == 0) return model;
  const std::vector<Affine> snapshot = model.decoders;
  const double reg_scale =
      n >= 2 ? cfg.lambda * 2.0 / static_cast<double>(n - 1) : 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    const auto chunks = pointers(per_author[a]);
    const std::vector<Tensor2> mixed = mixed_representations(model, a, chunks);
    std::vector<std::size_t> order(chunks.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, kFinetuneShuffle, a));
    Affine decoder = snapshot[a];
    Affine grad(decoder.in_dim(), decoder.out_dim());
    AdamState sw(decoder.weight);
    AdamState sb(decoder.bias);
    std::vector<const Tensor2*> bm;
    std::vector<const TrainingChunk*> bc;
    for (std::size_t epoch = 1; epoch <= cfg.finetune_epochs; ++epoch) {
      shuffle(order, rng);
      double sum = 0.0;
      const std::size_t nb = batch_count(order.size(), cfg.batch_size);
      for (std::size_t b = 0; b < nb; ++b) {
        bm.clear();
        bc.clear();
        const std::size_t end =
            std::min((b + 1) * cfg.batch_size, order.size());
        for (std::size_t i = b * cfg.batch_size; i < end; ++i) {
          bm.push_back(&mixed[order[i]]);
          bc.push_back(chunks[order[i]]);
        }
        grad.weight.setZero();
        grad.bias.setZero();
        double loss = decoder_batch(decoder, bm, bc, grad);
        if (reg_scale > 0.0) {
          loss += reg_scale *
                  decoder_reg_term(decoder, snapshot, a, reg_scale, &grad);
        }
        sum += loss;
        adam_step(decoder.weight, grad.weight, sw, cfg.adam());
        adam_step(decoder.bias, grad.bias, sb, cfg.adam());
      }
      if (log) {
        log({"finetune", epoch, std::to_string(a),
             nb ? sum / static_cast<double>(nb) : 0.0, {}});
      }
    }
    model.decoders[a] = std::move(decoder);
  }
  return model;
}

std::string_view to_string(Architecture arch) {
  switch (arch) {
    case Architecture::Naive: return "naive";
    case Architecture::SingleEncoder: return "single-encoder";
    case Architecture::Mos: return "mos";
    case Architecture::MosOpt: return "mos+opt";
    case Architecture::MosOptReg: return "mos+opt+reg";
  }
  return "mos+opt+reg";
}

Architecture parse_architecture(std::string_view text) {
  for (Architecture a : all_architectures()) {
    if (to_string(a) == text) return a;
  }
  invalid("unknown architecture '" + std::string(text) + "'");
}

const std::vector<Architecture>& all_architectures() {
  static const std::vector<Architecture> kAll = {
      Architecture::Naive, Architecture::SingleEncoder, Architecture::Mos,
      Architecture::MosOpt, Architecture::MosOptReg};
  return kAll;
}

std::size_t TrainedSystem::author_count() const {
  return architecture == Architecture::Naive ? separate.size()
                                             : shared.author_count();
}

std::vector<MosModel> train_separate(
    const PretrainModel& pre,
    std::span<const std::vector<TrainingChunk>> per_author,
    const TrainConfig& cfg, const TrainLog& log) {
  cfg.validate();
  std::vector<MosModel> out;
  auto all = [](const ParamRef&) { return true; };
  for (std::size_t a = 0; a < per_author.size(); ++a) {
    if (per_author[a].empty()) {
      throw Error(ErrorCode::EmptyAuthor,
                  "author " + std::to_string(a) + " has no training chunk");
    }
    MosModel model = as_mos(pre);
    ModelOptimizer opt(model, cfg.adam());
    MosModel grads = zeros_like(model);
    auto queue = pointers(per_author[a]);
    Rng rng(derive_seed(cfg.seed, kSeparateShuffle, a));
    for (std::size_t epoch = 1; epoch <= cfg.joint_epochs; ++epoch) {
      shuffle(queue, rng);
      double sum = 0.0;
      const std::size_t nb = batch_count(queue.size(), cfg.batch_size);
      for (std::size_t b = 0; b < nb; ++b) {
        const std::size_t begin = b * cfg.batch_size;
        const std::size_t take = std::min(cfg.batch_size, queue.size() - begin);
        for (auto& [ref, t] : parameters(grads)) t->setZero();
        LossGraph g =
            record_author_loss(model, 0, std::span(queue).subspan(begin, take));
        sum += g.loss();
        g.backward_into(grads);
        opt.step(model, grads, all);
      }
      if (log) {
        log({"separate", epoch, std::to_string(a),
             nb ? sum / static_cast<double>(nb) : 0.0, {}});
      }
    }
    out.push_back(std::move(model));
  }
  return out;
}

TrainedSystem train_system(Architecture arch, const PretrainModel& pre,
                           std::span<const std::vector<TrainingChunk>> per_author,
                           const TrainConfig& cfg, const TrainLog& log) {
  TrainedSystem sys;
  sys.architecture = arch;
  if (arch == Architecture::Naive) {
    sys.separate = train_separate(pre, per_author, cfg, log);
    return sys;
  }
  TrainConfig c = cfg;
  if (arch == Architecture::SingleEncoder) c.encoders = 1;
  MosModel model = init_from_pretrained(pre, per_author.size(), c);
  model = joint_train(std::move(model), per_author, c, log);
  if (arch == Architecture::SingleEncoder || arch == Architecture::Mos) {
    sys.shared = std::move(model);
    return sys;
  }
  sys.after_joint = model;
  if (arch == Architecture::MosOpt) c.lambda = 0.0;
  sys.shared = finetune(std::move(model), per_author, c, log);
  return sys;
}

}  // namespace flowlm
