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

#ifndef FLOWLM_SYNTH_HPP
#define FLOWLM_SYNTH_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flowlm/cfg.hpp"
#include "flowlm/verifier.hpp"
#include "json.hpp"

namespace flowlm {

struct SynthConfig {
  std::size_t authors = 10;          // candidate set
  std::size_t train_samples = 5;     // m
  std::size_t test_samples = 5;      // unseen binaries per candidate
  std::size_t wild_authors = 10;
  std::size_t wild_samples = 2;
  std::size_t pretrain_authors = 10;
  std::size_t pretrain_samples = 2;
  std::size_t blocks_per_binary = 30;
  std::size_t blocks_per_function = 6;
  std::size_t opcodes_per_block = 8;
  std::size_t alphabet = 16;         // A
  std::size_t patterns = 5;          // P
  std::size_t row_support = 3;       // non-zero successors per opcode
  double separation = 0.8;           // delta
  double concentration = 0.1;        // Dirichlet parameter of the style draw
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

nlohmann::json to_json(const SynthConfig& c);
// Unknown keys are rejected.
SynthConfig apply_json(const nlohmann::json& doc, SynthConfig c);

// First-order Markov chain over the opcode alphabet.
struct StylePattern {
  std::vector<double> initial;                 // A
  std::vector<std::vector<double>> transition;  // A x A, rows sum to 1
};

enum class SynthGroup { Candidate, Wild, External };

std::string_view to_string(SynthGroup g);

struct SynthAuthor {
  std::string author_id;
  SynthGroup group = SynthGroup::Candidate;
  std::vector<double> weights;  // over patterns
};

struct SynthBinary {
  Cfg cfg;
  std::string author_id;
  std::string role;  // "train", "test", "wild" or "pretrain"
  std::string path;  // relative to the corpus root
};

struct SynthCorpus {
  SynthConfig config;
  std::vector<std::string> alphabet;
  std::vector<StylePattern> patterns;
  std::vector<SynthAuthor> authors;
  std::vector<SynthBinary> binaries;

  const SynthAuthor& author(std::string_view author_id) const;
  const SynthBinary& binary(std::string_view binary_id) const;

  // Manifests with sample paths under `root`.
  CorpusManifest manifest(std::string_view role,
                          const std::filesystem::path& root) const;
  // Registers every binary in `store` under its path below `root`.
  void fill_store(CfgStore& store, const std::filesystem::path& root) const;
  nlohmann::json truth() const;
};

SynthCorpus generate_corpus(const SynthConfig& config);

// Writes binaries/, train.json, test.json, wild.json, pretrain.json and
// truth.json below `dir`.
void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir);

// Log-likelihood per opcode of `binary` under the generative mixture of
// `author`. Each block is an independent draw: log sum_p w_p P_p(block).
// Throws UnknownBinary when the binary uses an opcode outside the alphabet.
double bayes_oracle_score(const SynthCorpus& corpus, const Cfg& binary,
                          const SynthAuthor& author);

// Negative oracle log-likelihoods under each of `candidates`, usable with
// score() in place of model losses.
LossArray oracle_loss_array(const SynthCorpus& corpus, const Cfg& binary,
                            const std::vector<std::string>& candidates);

// Style weights of `count` fresh authors drawn from the generator's prior
// (fixed per corpus seed).
std::vector<std::vector<double>> prior_styles(const SynthCorpus& corpus,
                                              std::size_t count);

// Likelihood-ratio verification score: log P(binary | author) minus the log
// of its mean over `prior` styles. Higher means more likely authored.
double oracle_detection(const SynthCorpus& corpus, const Cfg& binary,
                        const SynthAuthor& author,
                        const std::vector<std::vector<double>>& prior);

}  // namespace flowlm

#endif  // FLOWLM_SYNTH_HPP
