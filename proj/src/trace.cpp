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

#include "flowlm/trace.hpp"

#include <algorithm>
#include <ostream>
#include <unordered_map>

#include "flowlm/error.hpp"

namespace flowlm {

std::vector<EdgeSequence> extract_edge_sequences(const Cfg& cfg) {
  std::vector<EdgeSequence> out;
  for (const auto& fn : cfg.functions) {
    if (fn.edges.empty()) {
      for (const auto& b : fn.blocks) out.push_back(b.opcodes);
      continue;
    }
    std::unordered_map<std::uint64_t, const BasicBlock*> by_id;
    for (const auto& b : fn.blocks) by_id.emplace(b.id, &b);
    for (const auto& [src, dst] : fn.edges) {
      const auto& a = by_id.at(src)->opcodes;
      const auto& b = by_id.at(dst)->opcodes;
      EdgeSequence seq;
      seq.reserve(a.size() + b.size());
      seq.insert(seq.end(), a.begin(), a.end());
      seq.insert(seq.end(), b.begin(), b.end());
      out.push_back(std::move(seq));
    }
  }
  return out;
}

NgramSequence to_ngrams(const EdgeSequence& seq, std::size_t n) {
  if (n == 0) throw Error(ErrorCode::InvalidConfig, "n-gram size must be >= 1");
  NgramSequence out;
  if (seq.size() < n) return out;
  out.reserve(seq.size() - n + 1);
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    std::string token = seq[i];
    for (std::size_t k = 1; k < n; ++k) {
      token.push_back(kTokenSeparator);
      token += seq[i + k];
    }
    out.push_back(std::move(token));
  }
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens)
    : tokens_(std::move(tokens)) {
  if (tokens_.empty()) tokens_.emplace_back(kUnkToken);
  if (tokens_.front() != kUnkToken) {
    throw Error(ErrorCode::MalformedInput,
                "vocabulary must start with the UNK token");
  }
  ids_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw Error(ErrorCode::MalformedInput,
                  "duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

Vocabulary build_vocab(std::span<const NgramSequence> corpus,
                       std::size_t cap) {
  if (cap == 0) throw Error(ErrorCode::InvalidConfig, "vocabulary cap is 0");
  std::unordered_map<std::string_view, std::size_t> counts;
  for (const auto& seq : corpus) {
    for (const auto& tok : seq) {
      if (tok == Vocabulary::kUnkToken) continue;
      ++counts[tok];
    }
  }
  if (counts.empty()) {
    throw Error(ErrorCode::EmptyCorpus, "no n-gram token in corpus");
  }
  std::vector<std::pair<std::string_view, std::size_t>> ranked(counts.begin(),
                                                               counts.end());
  const std::size_t keep = std::min(cap, ranked.size());
  auto by_rank = [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  };
  std::partial_sort(ranked.begin(), ranked.begin() + keep, ranked.end(),
                    by_rank);
  std::vector<std::string> tokens;
  tokens.reserve(keep + 1);
  tokens.emplace_back(Vocabulary::kUnkToken);
  for (std::size_t i = 0; i < keep; ++i) tokens.emplace_back(ranked[i].first);
  return Vocabulary(std::move(tokens));
}

std::vector<TrainingChunk> encode_chunks(std::span<const NgramSequence> seqs,
                                         const Vocabulary& vocab,
                                         std::size_t truncation,
                                         std::size_t hop) {
  if (truncation == 0 || hop == 0) {
    throw Error(ErrorCode::InvalidConfig,
                "truncation length and hop must be >= 1");
  }
  std::vector<TrainingChunk> out;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& seq = seqs[s];
    if (seq.size() <= hop) continue;
    std::vector<TokenId> ids(seq.size());
    std::transform(seq.begin(), seq.end(), ids.begin(),
                   [&](const std::string& t) { return vocab.id(t); });
    const std::size_t supervised = seq.size() - hop;
    for (std::size_t begin = 0; begin < supervised; begin += truncation) {
      const std::size_t end = std::min(begin + truncation, supervised);
      TrainingChunk chunk;
      chunk.sequence_index = s;
      chunk.input_ids.assign(ids.begin() + begin, ids.begin() + end);
      chunk.target_ids.assign(ids.begin() + begin + hop,
                              ids.begin() + end + hop);
      out.push_back(std::move(chunk));
    }
  }
  return out;
}

ExtractionStats& ExtractionStats::operator+=(const ExtractionStats& other) {
  edge_sequences += other.edge_sequences;
  shorter_than_ngram += other.shorter_than_ngram;
  shorter_than_hop += other.shorter_than_hop;
  chunks += other.chunks;
  positions += other.positions;
  return *this;
}

std::vector<NgramSequence> ngram_sequences(const Cfg& cfg, std::size_t n,
                                           ExtractionStats* stats) {
  std::vector<NgramSequence> out;
  const auto edges = extract_edge_sequences(cfg);
  if (stats) stats->edge_sequences += edges.size();
  for (const auto& e : edges) {
    auto grams = to_ngrams(e, n);
    if (grams.empty()) {
      if (stats) ++stats->shorter_than_ngram;
      continue;
    }
    out.push_back(std::move(grams));
  }
  return out;
}

std::vector<TrainingChunk> encode_binary(const Cfg& cfg,
                                         const Vocabulary& vocab,
                                         const TraceParams& params,
                                         ExtractionStats* stats) {
  const auto seqs = ngram_sequences(cfg, params.ngram, stats);
  auto chunks = encode_chunks(seqs, vocab, params.truncation, params.hop);
  if (stats) {
    for (const auto& s : seqs) {
      if (s.size() <= params.hop) ++stats->shorter_than_hop;
    }
    stats->chunks += chunks.size();
    for (const auto& c : chunks) stats->positions += c.size();
  }
  for (auto& c : chunks) c.binary_id = cfg.binary_id;
  return chunks;
}

void write_token_dump(std::ostream& out, std::string_view binary_id,
                      std::span<const NgramSequence> seqs) {
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    for (const auto& tok : seqs[s]) {
      out << binary_id << '\t' << s << '\t' << tok << '\n';
    }
  }
}

}  // namespace flowlm
