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

#ifndef FLOWLM_TRACE_HPP
#define FLOWLM_TRACE_HPP

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "flowlm/cfg.hpp"

namespace flowlm {

// Opcode trace of a basic-block bi-gram: source block then destination
// block. Edgeless functions contribute one sequence per block instead.
using EdgeSequence = std::vector<std::string>;

// Stride-1 opcode n-gram tokens over one EdgeSequence.
using NgramSequence = std::vector<std::string>;

using TokenId = std::int32_t;

std::vector<EdgeSequence> extract_edge_sequences(const Cfg& cfg);

// Empty when the sequence is shorter than n.
NgramSequence to_ngrams(const EdgeSequence& seq, std::size_t n);

class Vocabulary {
 public:
  static constexpr TokenId kUnk = 0;
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();
  // Token list in id order; entry 0 must be the UNK token.
  explicit Vocabulary(std::vector<std::string> tokens);

  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const noexcept {
      return std::hash<std::string_view>()(s);
    }
  };
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId, Hash, std::equal_to<>> ids_;
};

// UNK plus the `cap` most frequent tokens; ties go to the lexicographically
// smaller token. Throws EmptyCorpus when the corpus holds no token.
Vocabulary build_vocab(std::span<const NgramSequence> corpus, std::size_t cap);

struct TrainingChunk {
  std::vector<TokenId> input_ids;
  std::vector<TokenId> target_ids;  // target_ids[t] is h units after input t
  std::string author_id;
  std::string binary_id;
  std::size_t sequence_index = 0;  // provenance: source EdgeSequence

  std::size_t size() const { return input_ids.size(); }

  friend bool operator==(const TrainingChunk&, const TrainingChunk&) =
      default;
};

// Splits each sequence with more than `hop` units into ceil((len - hop) / T)
// chunks; shorter sequences are dropped.
std::vector<TrainingChunk> encode_chunks(std::span<const NgramSequence> seqs,
                                         const Vocabulary& vocab,
                                         std::size_t truncation,
                                         std::size_t hop);

struct TraceParams {
  std::size_t ngram = 5;
  std::size_t hop = 3;
  std::size_t truncation = 20;
};

struct ExtractionStats {
  std::size_t edge_sequences = 0;
  std::size_t shorter_than_ngram = 0;  // dropped before tokenization
  std::size_t shorter_than_hop = 0;    // dropped before chunking
  std::size_t chunks = 0;
  std::size_t positions = 0;

  ExtractionStats& operator+=(const ExtractionStats& other);
};

std::vector<NgramSequence> ngram_sequences(const Cfg& cfg, std::size_t n,
                                           ExtractionStats* stats = nullptr);

// Full preprocessing path shared by training and scoring. Chunks carry the
// binary id; author_id is left to the caller.
std::vector<TrainingChunk> encode_binary(const Cfg& cfg,
                                         const Vocabulary& vocab,
                                         const TraceParams& params,
                                         ExtractionStats* stats = nullptr);

// One `<binary_id>\t<seq_idx>\t<token>` line per token.
void write_token_dump(std::ostream& out, std::string_view binary_id,
                      std::span<const NgramSequence> seqs);

}  // namespace flowlm

#endif  // FLOWLM_TRACE_HPP
