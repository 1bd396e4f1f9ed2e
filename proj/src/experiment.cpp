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

#include "flowlm/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <iterator>
#include <mutex>
#include <set>
#include <thread>

#include "flowlm/error.hpp"
#include "flowlm/random.hpp"

namespace flowlm {

using json = nlohmann::json;

PreparedData prepare_data(const CorpusManifest& train,
                          const CorpusManifest* pretrain, CfgStore& store,
                          const TrainConfig& cfg) {
  cfg.validate();
  PreparedData d;
  auto seqs = manifest_ngrams(train, store, cfg.ngram);
  if (pretrain != nullptr) {
    auto more = manifest_ngrams(*pretrain, store, cfg.ngram);
    std::move(more.begin(), more.end(), std::back_inserter(seqs));
  }
  d.vocab = build_vocab(seqs, cfg.vocab_cap);
  d.train = encode_manifest(train, store, d.vocab, cfg.trace(), &d.stats);
  if (pretrain != nullptr) {
    const auto pre = encode_manifest(*pretrain, store, d.vocab, cfg.trace());
    for (const auto& c : pre.chunks) {
      d.pretrain.insert(d.pretrain.end(), c.begin(), c.end());
    }
  } else {
    for (const auto& c : d.train.chunks) {
      d.pretrain.insert(d.pretrain.end(), c.begin(), c.end());
    }
  }
  return d;
}

PairScorer::PairScorer(const TrainedSystem& system, const Vocabulary& vocab,
                       TraceParams trace, std::vector<std::string> authors,
                       CfgStore& store)
    : system_(system),
      vocab_(vocab),
      trace_(trace),
      authors_(std::move(authors)),
      store_(store) {
  if (authors_.size() != system_.author_count()) {
    throw Error(ErrorCode::ShapeMismatch,
                "author list does not match the trained system");
  }
}

void PairScorer::prefetch(const std::vector<std::string>& paths,
                          std::size_t threads) {
  std::vector<std::string> todo;
  std::vector<const Cfg*> cfgs;
  for (const auto& p : paths) {
    if (cache_.count(p) || std::find(todo.begin(), todo.end(), p) != todo.end()) {
      continue;
    }
    todo.push_back(p);
    cfgs.push_back(&store_.get(p));  // store is not thread-safe
  }
  std::vector<LossArray> out(todo.size());
  const std::size_t workers = std::max<std::size_t>(
      1, std::min(threads, todo.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < todo.size(); ++i) {
      out[i] = loss_array(system_, *cfgs[i], vocab_, trace_);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < todo.size(); i = next++) {
          try {
            out[i] = loss_array(system_, *cfgs[i], vocab_, trace_);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  for (std::size_t i = 0; i < todo.size(); ++i) {
    cache_.emplace(todo[i], std::move(out[i]));
  }
}

const LossArray& PairScorer::array(const std::string& path) {
  auto it = cache_.find(path);
  if (it == cache_.end()) {
    it = cache_.emplace(path, loss_array(system_, store_.get(path), vocab_,
                                         trace_)).first;
  }
  return it->second;
}

VerificationScore PairScorer::verify(const VerificationPair& pair) {
  const auto it = std::find(authors_.begin(), authors_.end(), pair.author_id);
  if (it == authors_.end()) {
    throw Error(ErrorCode::UnknownAuthor,
                "author '" + pair.author_id + "' is not a candidate");
  }
  VerificationScore s =
      score(static_cast<std::size_t>(it - authors_.begin()), array(pair.path));
  s.author_id = pair.author_id;
  return s;
}

double PairScorer::detection(const VerificationPair& pair) {
  return -verify(pair).score;
}

std::vector<ScoredLabel> detection_scores(
    PairScorer& scorer, const std::vector<VerificationPair>& pairs,
    std::size_t threads) {
  std::vector<std::string> paths;
  for (const auto& p : pairs) paths.push_back(p.path);
  scorer.prefetch(paths, threads);
  std::vector<ScoredLabel> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({scorer.detection(p), p.label});
  return out;
}

std::vector<ScoredLabel> oracle_scores(const SynthCorpus& corpus,
                                       const std::vector<VerificationPair>& pairs,
                                       CfgStore& store,
                                       std::size_t prior_samples) {
  const auto prior = prior_styles(corpus, prior_samples);
  std::vector<ScoredLabel> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.push_back({oracle_detection(corpus, store.get(p.path),
                                    corpus.author(p.author_id), prior),
                   p.label});
  }
  return out;
}

json ExperimentResult::to_json() const {
  json r = json::object();
  for (const auto& [k, v] : reports) r[k] = flowlm::to_json(v);
  return {{"reports", r}, {"seconds", seconds}};
}

std::string ratio_key(std::string_view base, std::size_t ratio) {
  if (ratio == 1) return std::string(base);
  return std::string(base) + "@ratio=" + std::to_string(ratio);
}

std::string mix_key(std::string_view base, double proportion) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", proportion);
  return std::string(base) + "@mix=" + buf;
}

namespace {

// Replaces every pair's binary by a collaborator-mixed copy registered in
// `store`. Collaborators are two binaries of other authors drawn from the
// pool of pair binaries.
std::vector<VerificationPair> mixed_pairs(
    const std::vector<VerificationPair>& pairs, double proportion,
    std::uint64_t seed, CfgStore& store) {
  std::map<std::string, std::string> owner;
  for (const auto& p : pairs) owner[p.path] = p.true_author;
  std::vector<std::string> pool;
  for (const auto& [path, a] : owner) pool.push_back(path);
  std::map<std::string, std::string> renamed;
  std::size_t index = 0;
  for (const auto& [path, author] : owner) {
    Rng rng(derive_seed(seed, index++));
    std::vector<Cfg> donors;
    std::set<std::string> used{author};
    while (donors.size() < 2) {
      const std::string& cand = pool[uniform_index(rng, pool.size())];
      if (!used.insert(owner[cand]).second) continue;
      donors.push_back(store.get(cand));
    }
    const std::string key = mix_key(path, proportion);
    store.put(key, mix_collaborators(store.get(path), donors, proportion,
                                     derive_seed(seed, index, 1)));
    renamed[path] = key;
  }
  auto out = pairs;
  for (auto& p : out) p.path = renamed[p.path];
  return out;
}

}  // namespace

ExperimentResult run_synthetic(const SynthConfig& synth, const TrainConfig& train,
                               const ExperimentOptions& options,
                               const TrainLog& log) {
  const auto start = std::chrono::steady_clock::now();
  const SynthCorpus corpus = generate_corpus(synth);
  CfgStore store;
  const std::filesystem::path root = "synth";
  corpus.fill_store(store, root);
  const auto train_m = corpus.manifest("train", root);
  const auto test_m = corpus.manifest("test", root);
  const auto wild_m = corpus.manifest("wild", root);
  const auto pre_m = corpus.manifest("pretrain", root);

  const PreparedData data = prepare_data(train_m, &pre_m, store, train);
  const PretrainModel pre = pretrain(data.pretrain, data.vocab.size(), train, log);
  const auto& candidates = data.train.authors;

  std::map<std::size_t, std::vector<VerificationPair>> pairs;
  for (std::size_t r : options.ratios) {
    pairs[r] = build_pairs(test_m, candidates, wild_m, r,
                           derive_seed(synth.seed, 0x70616972), &train_m);
  }
  ExperimentResult result;
  auto config_echo = [&](std::string_view what, std::size_t ratio) {
    return json{{"method", what},
                {"ratio", ratio},
                {"synth", to_json(synth)},
                {"train", to_json(train)}};
  };
  for (std::size_t ai = 0; ai < options.architectures.size(); ++ai) {
    const Architecture arch = options.architectures[ai];
    const TrainedSystem sys = train_system(arch, pre, data.train.chunks, train, log);
    PairScorer scorer(sys, data.vocab, train.trace(), candidates, store);
    const std::string name(to_string(arch));
    for (const auto& [r, ps] : pairs) {
      result.reports[ratio_key(name, r)] = metric_report(
          detection_scores(scorer, ps, options.threads), config_echo(name, r));
    }
    if (ai == 0 && !options.proportions.empty()) {
      const auto& base = pairs.begin()->second;
      for (double p : options.proportions) {
        const auto mixed =
            mixed_pairs(base, p, derive_seed(synth.seed, 0x6d6978), store);
        auto echo = config_echo(name, pairs.begin()->first);
        echo["major_proportion"] = p;
        result.reports[mix_key(name, p)] = metric_report(
            detection_scores(scorer, mixed, options.threads), echo);
      }
    }
  }
  if (options.oracle) {
    for (const auto& [r, ps] : pairs) {
      result.reports[ratio_key("oracle", r)] = metric_report(
          oracle_scores(corpus, ps, store), config_echo("oracle", r));
    }
  }
  if (options.cosine) {
    for (const auto& [r, ps] : pairs) {
      MetricReport rep = cosine_baseline(train_m, ps, store);
      rep.config = config_echo("cosine", r);
      result.reports[ratio_key("cosine", r)] = rep;
    }
  }
  result.seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace flowlm
