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

// Deliberately slow reference implementations, written from the textbook
// formulas with plain loops and no shared code with the library kernels.

#ifndef FLOWLM_TESTS_ORACLES_HPP
#define FLOWLM_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "flowlm/eval.hpp"
#include "flowlm/model.hpp"
#include "flowlm/nn.hpp"
#include "flowlm/trace.hpp"
#include "json.hpp"

namespace flowlm::oracle {

inline double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Per-position cross-entropy of one chunk under one author.
inline std::vector<double> forward_author(const MosModel& m, std::size_t author,
                                          const TrainingChunk& chunk) {
  const std::size_t S = m.encoders.size();
  const std::size_t H = static_cast<std::size_t>(m.encoders[0].hidden_dim());
  const std::size_t E = static_cast<std::size_t>(m.embedding.cols());
  const std::size_t V = static_cast<std::size_t>(m.embedding.rows());
  const bool lstm = m.encoders[0].kind == CellKind::Lstm;
  std::vector<std::vector<double>> h(S, std::vector<double>(H, 0.0));
  std::vector<std::vector<double>> c(S, std::vector<double>(H, 0.0));
  std::vector<double> out;
  for (std::size_t t = 0; t < chunk.size(); ++t) {
    std::vector<double> x(E);
    for (std::size_t k = 0; k < E; ++k) x[k] = m.embedding(chunk.input_ids[t], k);
    for (std::size_t j = 0; j < S; ++j) {
      const RecurrentCell& p = m.encoders[j];
      auto pre = [&](std::size_t row) {
        double z = p.bias(0, row);
        for (std::size_t k = 0; k < E; ++k) z += p.input_weights(row, k) * x[k];
        for (std::size_t k = 0; k < H; ++k) z += p.recurrent_weights(row, k) * h[j][k];
        return z;
      };
      std::vector<double> nh(H), nc(H, 0.0);
      for (std::size_t u = 0; u < H; ++u) {
        if (lstm) {
          nc[u] = sig(pre(H + u)) * c[j][u] + sig(pre(u)) * std::tanh(pre(2 * H + u));
          nh[u] = sig(pre(3 * H + u)) * std::tanh(nc[u]);
        } else {
          nh[u] = std::tanh(pre(u));
        }
      }
      h[j] = nh;
      c[j] = nc;
    }
    std::vector<double> r(H, 0.0);
    const Affine& g = m.gates[author];
    for (std::size_t j = 0; j < S; ++j) {
      for (std::size_t u = 0; u < H; ++u) {
        double w = 1.0;
        if (m.gate_kind != GateKind::Pinned) {
          const std::size_t row =
              m.gate_kind == GateKind::Scalar ? j : j * H + u;
          double z = g.bias(0, row);
          for (std::size_t k = 0; k < E; ++k) z += g.weight(row, k) * x[k];
          w = sig(z);
        }
        r[u] += w * h[j][u];
      }
    }
    const Affine& d = m.decoders[author];
    std::vector<double> logits(V);
    double mx = -1e300;
    for (std::size_t v = 0; v < V; ++v) {
      double z = d.bias(0, v);
      for (std::size_t u = 0; u < H; ++u) z += d.weight(v, u) * r[u];
      logits[v] = z;
      mx = std::max(mx, z);
    }
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - mx);
    out.push_back(mx + std::log(sum) - logits[chunk.target_ids[t]]);
  }
  return out;
}

inline double score(std::size_t i, const std::vector<double>& L) {
  double avg = 0.0;
  for (double l : L) avg += l;
  avg /= static_cast<double>(L.size());
  double var = 0.0;
  for (double l : L) var += (l - avg) * (l - avg);
  var /= static_cast<double>(L.size());
  return (L[i] - avg) / var;
}

inline double auc(const std::vector<ScoredLabel>& s) {
  double wins = 0.0, pairs = 0.0;
  for (const auto& p : s) {
    if (!p.label) continue;
    for (const auto& n : s) {
      if (n.label) continue;
      pairs += 1.0;
      if (p.score > n.score) wins += 1.0;
      else if (p.score == n.score) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Precision at every positive's rank; rank = items scored strictly higher
// plus items tied but earlier in the input, plus one.
inline double average_precision(const std::vector<ScoredLabel>& s) {
  double total = 0.0;
  std::size_t npos = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!s[i].label) continue;
    ++npos;
    std::size_t rank = 1, hits = 1;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (j == i) continue;
      const bool above = s[j].score > s[i].score ||
                         (s[j].score == s[i].score && j < i);
      if (above) {
        ++rank;
        hits += s[j].label;
      }
    }
    total += static_cast<double>(hits) / static_cast<double>(rank);
  }
  return total / static_cast<double>(npos);
}

// Walks the raw document, not the parsed graph.
inline std::vector<EdgeSequence> edge_sequences(const nlohmann::json& doc) {
  std::vector<EdgeSequence> out;
  for (const auto& fn : doc["functions"]) {
    std::map<std::int64_t, EdgeSequence> live;
    for (const auto& b : fn["blocks"]) {
      EdgeSequence ops;
      for (const auto& o : b["opcodes"]) ops.push_back(o.get<std::string>());
      if (!ops.empty()) live[b["id"].get<std::int64_t>()] = ops;
    }
    if (live.empty()) continue;
    std::vector<std::pair<std::int64_t, std::int64_t>> edges;
    for (const auto& e : fn["edges"]) {
      std::pair<std::int64_t, std::int64_t> p{e[0], e[1]};
      if (!live.count(p.first) || !live.count(p.second)) continue;
      if (std::find(edges.begin(), edges.end(), p) != edges.end()) continue;
      edges.push_back(p);
    }
    if (edges.empty()) {
      for (const auto& b : fn["blocks"]) {
        auto it = live.find(b["id"].get<std::int64_t>());
        if (it != live.end()) out.push_back(it->second);
      }
      continue;
    }
    for (const auto& [s, d] : edges) {
      EdgeSequence seq = live[s];
      seq.insert(seq.end(), live[d].begin(), live[d].end());
      out.push_back(seq);
    }
  }
  return out;
}

inline NgramSequence ngrams(const EdgeSequence& seq, std::size_t n) {
  NgramSequence out;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    std::string tok;
    for (std::size_t k = 0; k < n; ++k) {
      if (k) tok += "|";
      tok += seq[i + k];
    }
    out.push_back(tok);
  }
  return out;
}


// log-sum-exp in long double.
inline double softmax_loss(const std::vector<double>& logits, std::size_t target) {
  long double z = 0.0L;
  for (double l : logits) z += std::exp(static_cast<long double>(l));
  return static_cast<double>(std::log(z) - static_cast<long double>(logits[target]));
}

// Element-wise Adam with bias correction.
struct Adam {
  AdamConfig cfg;
  std::vector<double> m, v;
  int t = 0;

  void step(std::vector<double>& p, const std::vector<double>& g) {
    if (m.empty()) m.assign(p.size(), 0.0), v.assign(p.size(), 0.0);
    ++t;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(cfg.beta1, t));
      const double vh = v[i] / (1 - std::pow(cfg.beta2, t));
      p[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.epsilon);
    }
  }
};

}  // namespace flowlm::oracle

#endif  // FLOWLM_TESTS_ORACLES_HPP
