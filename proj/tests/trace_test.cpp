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

#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <map>
#include <sstream>

#include "flowlm/error.hpp"
#include "flowlm/trace.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace flowlm {
namespace {

using nlohmann::json;

Cfg two_blocks(bool with_edge) {
  Cfg cfg;
  cfg.binary_id = "t";
  Function fn;
  fn.name = "f";
  fn.blocks = {{0, {"mov", "add"}}, {1, {"ret"}}};
  if (with_edge) fn.edges = {{0, 1}};
  cfg.functions.push_back(fn);
  return cfg;
}

TEST(Extract, EdgeConcatenatesSourceThenDestination) {
  const auto seqs = extract_edge_sequences(two_blocks(true));
  ASSERT_EQ(seqs.size(), 1u);
  EXPECT_EQ(seqs[0], (EdgeSequence{"mov", "add", "ret"}));
}

TEST(Extract, EdgelessFunctionFallsBackToBlocks) {
  Cfg cfg;
  cfg.functions.push_back({"f", {{0, {"mov"}}}, {}});
  const auto seqs = extract_edge_sequences(cfg);
  ASSERT_EQ(seqs.size(), 1u);
  EXPECT_EQ(seqs[0], (EdgeSequence{"mov"}));
  EXPECT_EQ(extract_edge_sequences(two_blocks(false)).size(), 2u);
}

TEST(ExtractProperty, RandomCfgsMatchOracles) {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(99);
  for (int i = 0; i < 1000; ++i) {
    const json doc = testing::random_cfg_json(rng, 5, 8);
    const Cfg cfg = parse_cfg(doc);
    const auto seqs = extract_edge_sequences(cfg);
    ASSERT_EQ(seqs, oracle::edge_sequences(doc));
    for (std::size_t n = 1; n <= 6; ++n) {
      for (const auto& s : seqs) ASSERT_EQ(to_ngrams(s, n), oracle::ngrams(s, n));
    }
  }
  const double secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(secs, 60.0);
}

TEST(Ngrams, Examples) {
  const EdgeSequence s = {"mov", "add", "ret"};
  EXPECT_EQ(to_ngrams(s, 2), (NgramSequence{"mov|add", "add|ret"}));
  EXPECT_EQ(to_ngrams(s, 1), (NgramSequence{"mov", "add", "ret"}));
  EXPECT_TRUE(to_ngrams(s, 4).empty());
  EXPECT_EQ(to_ngrams(s, 3).size(), 1u);
  EXPECT_THROW(to_ngrams(s, 0), Error);
}

TEST(Vocab, FrequencyOrder) {
  const std::vector<NgramSequence> corpus = {{"a", "b", "a"}, {"a"}};
  Vocabulary v = build_vocab(corpus, 10);
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"<unk>", "a", "b"}));
  EXPECT_EQ(v.id("a"), 1);
  EXPECT_EQ(v.id("b"), 2);
  EXPECT_EQ(v.id("zzz"), Vocabulary::kUnk);
}

TEST(Vocab, TieBrokenLexicographically) {
  const std::vector<NgramSequence> corpus = {{"b", "a", "b", "a"}};
  Vocabulary v = build_vocab(corpus, 1);
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"<unk>", "a"}));
}

TEST(Vocab, Errors) {
  const std::vector<NgramSequence> empty = {{}, {}};
  try {
    build_vocab(empty, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyCorpus);
  }
  EXPECT_THROW(Vocabulary({"a"}), Error);
  EXPECT_THROW(Vocabulary({"<unk>", "a", "a"}), Error);
}

TEST(VocabProperty, MatchesFullSortAndCoverageIsMonotone) {
  Rng rng(3);
  std::vector<NgramSequence> corpus(200);
  for (auto& seq : corpus) {
    const std::size_t len = uniform_index(rng, 30);
    for (std::size_t i = 0; i < len; ++i) {
      // skewed draw so frequencies differ and ties occur
      const std::size_t k = uniform_index(rng, 1 + uniform_index(rng, 300));
      seq.push_back("t" + std::to_string(k));
    }
  }
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& s : corpus) {
    for (const auto& t : s) ++counts[t], ++total;
  }
  std::vector<std::pair<std::string, std::size_t>> all(counts.begin(), counts.end());
  std::stable_sort(all.begin(), all.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  double last_unk = 1.0;
  for (std::size_t cap : {1, 5, 20, 50, 100, 250, 1000}) {
    Vocabulary v = build_vocab(corpus, cap);
    ASSERT_EQ(v.size(), std::min(cap, all.size()) + 1);
    for (std::size_t i = 0; i + 1 < v.size(); ++i) {
      EXPECT_EQ(v.token(static_cast<TokenId>(i + 1)), all[i].first);
    }
    std::size_t unk = 0;
    for (const auto& s : corpus) {
      for (const auto& t : s) unk += v.id(t) == Vocabulary::kUnk;
    }
    const double rate = static_cast<double>(unk) / total;
    EXPECT_LE(rate, last_unk);
    last_unk = rate;
    EXPECT_EQ(build_vocab(corpus, cap), v);
  }
}

Vocabulary units_vocab() {
  return Vocabulary({"<unk>", "u1", "u2", "u3", "u4", "u5"});
}

TEST(Chunks, NextTokenShift) {
  const std::vector<NgramSequence> seqs = {{"u1", "u2", "u3", "u4", "u5"}};
  const auto chunks = encode_chunks(seqs, units_vocab(), 20, 1);
  ASSERT_EQ(chunks.size(), 1u);
  EXPECT_EQ(chunks[0].input_ids, (std::vector<TokenId>{1, 2, 3, 4}));
  EXPECT_EQ(chunks[0].target_ids, (std::vector<TokenId>{2, 3, 4, 5}));
}

TEST(Chunks, HopArithmetic) {
  const std::vector<NgramSequence> seqs = {{"u1", "u2", "u3", "u4", "u5"}};
  const auto chunks = encode_chunks(seqs, units_vocab(), 20, 3);
  ASSERT_EQ(chunks.size(), 1u);
  EXPECT_EQ(chunks[0].input_ids, (std::vector<TokenId>{1, 2}));
  EXPECT_EQ(chunks[0].target_ids, (std::vector<TokenId>{4, 5}));
}

TEST(Chunks, TruncationUnknownsAndDrops) {
  const std::vector<NgramSequence> seqs = {
      {"u1", "x", "u3", "u4", "u5", "u1", "u2"}, {"u1", "u2"}, {"u1"}};
  const auto chunks = encode_chunks(seqs, units_vocab(), 2, 2);
  ASSERT_EQ(chunks.size(), 3u);
  EXPECT_EQ(chunks[0].input_ids, (std::vector<TokenId>{1, 0}));
  EXPECT_EQ(chunks[0].target_ids, (std::vector<TokenId>{3, 4}));
  EXPECT_EQ(chunks[2].input_ids, (std::vector<TokenId>{5}));
  EXPECT_EQ(chunks[2].target_ids, (std::vector<TokenId>{2}));
  for (const auto& c : chunks) EXPECT_EQ(c.sequence_index, 0u);
  EXPECT_THROW(encode_chunks(seqs, units_vocab(), 0, 1), Error);
  EXPECT_THROW(encode_chunks(seqs, units_vocab(), 2, 0), Error);
}

TEST(ChunksProperty, CountingOracleAndProvenance) {
  Rng rng(21);
  for (int round = 0; round < 50; ++round) {
    std::vector<NgramSequence> seqs(1 + uniform_index(rng, 20));
    std::vector<std::string> toks = {"a", "b", "c", "d", "e"};
    for (auto& s : seqs) {
      const std::size_t len = uniform_index(rng, 40);
      for (std::size_t i = 0; i < len; ++i) s.push_back(toks[uniform_index(rng, 5)]);
    }
    Vocabulary v = build_vocab(std::vector<NgramSequence>{{"a", "b", "c"}}, 3);
    const std::size_t T = 1 + uniform_index(rng, 25);
    const std::size_t h = 1 + uniform_index(rng, 5);
    const auto chunks = encode_chunks(seqs, v, T, h);

    std::size_t want_positions = 0, want_chunks = 0;
    for (const auto& s : seqs) {
      const std::size_t sup = s.size() > h ? s.size() - h : 0;
      want_positions += sup;
      want_chunks += (sup + T - 1) / T;
    }
    std::size_t positions = 0;
    std::map<std::size_t, std::size_t> offset;
    for (const auto& c : chunks) {
      ASSERT_EQ(c.input_ids.size(), c.target_ids.size());
      ASSERT_GE(c.size(), 1u);
      ASSERT_LE(c.size(), T);
      const auto& src = seqs[c.sequence_index];
      const std::size_t base = offset[c.sequence_index];
      for (std::size_t t = 0; t < c.size(); ++t) {
        EXPECT_EQ(c.input_ids[t], v.id(src[base + t]));
        EXPECT_EQ(c.target_ids[t], v.id(src[base + t + h]));
        EXPECT_LT(static_cast<std::size_t>(c.target_ids[t]), v.size());
      }
      offset[c.sequence_index] += c.size();
      positions += c.size();
    }
    EXPECT_EQ(positions, want_positions);
    EXPECT_EQ(chunks.size(), want_chunks);
  }
}

TEST(Encode, BinaryPipelineIsDeterministicAndCounts) {
  Rng rng(8);
  const Cfg cfg = parse_cfg(testing::random_cfg_json(rng, 6, 8));
  TraceParams p{2, 1, 3};
  const auto seqs = ngram_sequences(cfg, p.ngram);
  Vocabulary v = build_vocab(seqs, 50);
  ExtractionStats stats;
  const auto a = encode_binary(cfg, v, p, &stats);
  const auto b = encode_binary(cfg, v, p);
  EXPECT_EQ(a, b);
  EXPECT_EQ(stats.edge_sequences, extract_edge_sequences(cfg).size());
  EXPECT_EQ(stats.chunks, a.size());
  std::size_t pos = 0;
  for (const auto& c : a) {
    pos += c.size();
    EXPECT_EQ(c.binary_id, cfg.binary_id);
  }
  EXPECT_EQ(stats.positions, pos);
  EXPECT_EQ(stats.edge_sequences - stats.shorter_than_ngram, seqs.size());
}

TEST(Encode, TokenDump) {
  std::ostringstream out;
  const std::vector<NgramSequence> seqs = {{"a|b"}, {"c|d", "d|e"}};
  write_token_dump(out, "bin", seqs);
  EXPECT_EQ(out.str(), "bin\t0\ta|b\nbin\t1\tc|d\nbin\t1\td|e\n");
}

}  // namespace
}  // namespace flowlm
