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

#include "flowlm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <string_view>

#include "flowlm/error.hpp"
#include "flowlm/random.hpp"

namespace flowlm {

using json = nlohmann::json;

namespace {

constexpr std::string_view kMixPrefix = "mix.";

struct Sample {
  std::string author;
  std::string path;
};

void check_two_classes(const std::vector<ScoredLabel>& s, bool need_negative) {
  std::size_t pos = 0;
  for (const auto& x : s) {
    if (!std::isfinite(x.score)) {
      throw Error(ErrorCode::MalformedInput, "non-finite detection score");
    }
    pos += x.label;
  }
  if (pos == 0 || (need_negative && pos == s.size())) {
    throw Error(ErrorCode::OneClassOnly,
                "metric needs at least one positive and one negative");
  }
}

}  // namespace

std::string_view to_string(NegativeOrigin o) {
  switch (o) {
    case NegativeOrigin::None: return "none";
    case NegativeOrigin::InSet: return "in_candidate_set";
    case NegativeOrigin::Wild: return "wild";
  }
  return "none";
}

std::vector<VerificationPair> build_pairs(
    const CorpusManifest& test, const std::vector<std::string>& candidates,
    const CorpusManifest& wild, std::size_t ratio, std::uint64_t seed,
    const CorpusManifest* train) {
  if (ratio == 0) {
    throw Error(ErrorCode::InvalidConfig, "negative ratio must be at least 1");
  }
  const std::set<std::string> cand_set(candidates.begin(), candidates.end());
  std::vector<Sample> wild_pool;
  for (const auto& a : wild.authors) {
    if (cand_set.count(a.author_id)) {
      throw Error(ErrorCode::MalformedInput,
                  "wild author '" + a.author_id + "' is also a candidate");
    }
    for (const auto& s : a.samples) wild_pool.push_back({a.author_id, s});
  }
  std::vector<Sample> positives;
  for (const auto& c : candidates) {
    const ManifestAuthor* a = test.find(c);
    if (a == nullptr || a->samples.empty()) {
      throw Error(ErrorCode::InsufficientSamples,
                  "candidate '" + c + "' has no test sample");
    }
    const ManifestAuthor* tr = train ? train->find(c) : nullptr;
    for (const auto& s : a->samples) {
      if (tr && std::find(tr->samples.begin(), tr->samples.end(), s) !=
                    tr->samples.end()) {
        throw Error(ErrorCode::MalformedInput,
                    "test sample " + s + " is a training sample of '" + c + "'");
      }
      positives.push_back({c, s});
    }
  }

  std::vector<VerificationPair> out;
  for (std::size_t p = 0; p < positives.size(); ++p) {
    const Sample& pos = positives[p];
    out.push_back({pos.author, pos.path, true, NegativeOrigin::None, pos.author});
    std::vector<const Sample*> in_set;
    for (const auto& q : positives) {
      if (q.author != pos.author) in_set.push_back(&q);
    }
    std::vector<const Sample*> wild_order;
    for (const auto& w : wild_pool) wild_order.push_back(&w);
    std::size_t need_in = 0;
    std::size_t need_wild = 0;
    for (std::size_t k = 0; k < ratio; ++k) {
      ((p * ratio + k) % 2 == 0 ? need_in : need_wild) += 1;
    }
    if (need_in > in_set.size() || need_wild > wild_order.size()) {
      throw Error(ErrorCode::InsufficientSamples,
                  "not enough negatives for ratio " + std::to_string(ratio));
    }
    Rng rng(derive_seed(seed, p));
    shuffle(in_set, rng);
    shuffle(wild_order, rng);
    std::size_t ni = 0;
    std::size_t nw = 0;
    for (std::size_t k = 0; k < ratio; ++k) {
      const bool in = (p * ratio + k) % 2 == 0;
      const Sample* s = in ? in_set[ni++] : wild_order[nw++];
      out.push_back({pos.author, s->path, false,
                     in ? NegativeOrigin::InSet : NegativeOrigin::Wild,
                     s->author});
    }
  }
  return out;
}

double auc_roc(const std::vector<ScoredLabel>& scores) {
  check_two_classes(scores, true);
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a].score < scores[b].score;
  });
  double rank_sum = 0.0;
  double n_pos = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    double pos = 0.0;
    do {
      pos += scores[idx[j]].label;
      ++j;
    } while (j < idx.size() && scores[idx[j]].score == scores[idx[i]].score);
    // Ranks i+1..j share their average.
    rank_sum += pos * (static_cast<double>(i + 1 + j) / 2.0);
    n_pos += pos;
    i = j;
  }
  const double n_neg = static_cast<double>(scores.size()) - n_pos;
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double average_precision(const std::vector<ScoredLabel>& scores) {
  check_two_classes(scores, false);
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a].score > scores[b].score;
  });
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (!scores[idx[r]].label) continue;
    hits += 1.0;
    sum += hits / static_cast<double>(r + 1);
  }
  return sum / hits;
}

std::vector<RocPoint> roc_curve(const std::vector<ScoredLabel>& scores) {
  check_two_classes(scores, true);
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a].score > scores[b].score;
  });
  double n_pos = 0.0;
  for (const auto& s : scores) n_pos += s.label;
  const double n_neg = static_cast<double>(scores.size()) - n_pos;
  std::vector<RocPoint> out{{0.0, 0.0}};
  double tp = 0.0;
  double fp = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    do {
      (scores[idx[j]].label ? tp : fp) += 1.0;
      ++j;
    } while (j < idx.size() && scores[idx[j]].score == scores[idx[i]].score);
    out.push_back({fp / n_neg, tp / n_pos});
    i = j;
  }
  return out;
}

void write_roc_csv(std::ostream& out, const std::vector<RocPoint>& curve) {
  out << "fpr,tpr\n";
  char buf[64];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.fpr, p.tpr);
    out << buf;
  }
}

MetricReport metric_report(const std::vector<ScoredLabel>& scores, json config) {
  MetricReport r;
  r.auc_roc = auc_roc(scores);
  r.ap = average_precision(scores);
  for (const auto& s : scores) (s.label ? r.n_pos : r.n_neg) += 1;
  r.config = std::move(config);
  return r;
}

json to_json(const MetricReport& r) {
  return {{"auc_roc", r.auc_roc},
          {"ap", r.ap},
          {"n_pos", r.n_pos},
          {"n_neg", r.n_neg},
          {"config", r.config}};
}

Cfg mix_collaborators(const Cfg& binary, const std::vector<Cfg>& collaborators,
                      double major_proportion, std::uint64_t seed) {
  if (!(major_proportion >= 0.6 && major_proportion <= 1.0)) {
    throw Error(ErrorCode::ProportionInfeasible,
                "major proportion must be in [0.6, 1.0]");
  }
  if (collaborators.empty()) {
    throw Error(ErrorCode::ProportionInfeasible, "no collaborator given");
  }
  Cfg out = binary;
  if (major_proportion == 1.0) return out;

  struct Donor {
    std::size_t owner;
    const Function* fn;
    std::size_t opcodes;
  };
  std::vector<Donor> pool;
  for (std::size_t c = 0; c < collaborators.size(); ++c) {
    for (const auto& f : collaborators[c].functions) {
      if (f.edges.empty()) continue;
      std::size_t n = 0;
      for (const auto& b : f.blocks) n += b.opcodes.size();
      pool.push_back({c, &f, n});
    }
  }
  Rng rng(derive_seed(seed, 0x6d6978));
  shuffle(pool, rng);
  const double original = static_cast<double>(binary.opcode_count());
  double total = original;
  for (const auto& d : pool) {
    const double next = total + static_cast<double>(d.opcodes);
    if (original / next < major_proportion) continue;
    Function f = *d.fn;
    f.name = std::string(kMixPrefix) + std::to_string(d.owner) + "." + f.name;
    out.functions.push_back(std::move(f));
    total = next;
  }
  if (original / total > major_proportion + 0.05) {
    throw Error(ErrorCode::ProportionInfeasible,
                "collaborators too small to reach the requested proportion");
  }
  out.binary_id = binary.binary_id + "~mix";
  return out;
}

double original_share(const Cfg& mixed) {
  double own = 0.0;
  double total = 0.0;
  for (const auto& f : mixed.functions) {
    double n = 0.0;
    for (const auto& b : f.blocks) n += static_cast<double>(b.opcodes.size());
    total += n;
    if (!f.name.starts_with(kMixPrefix)) own += n;
  }
  return total > 0.0 ? own / total : 0.0;
}

SparseVector cosine_features(const Cfg& cfg) {
  std::map<std::string, double> counts;
  auto join = [](const std::vector<std::string>& ops, std::size_t b,
                 std::size_t e) {
    std::string s;
    for (std::size_t i = b; i < e; ++i) {
      if (i > b) s += kTokenSeparator;
      s += ops[i];
    }
    return s;
  };
  for (const auto& f : cfg.functions) {
    std::map<std::uint64_t, std::string> signature;
    for (const auto& b : f.blocks) {
      const auto& ops = b.opcodes;
      for (std::size_t n = 1; n <= 3; ++n) {
        for (std::size_t i = 0; i + n <= ops.size(); ++i) {
          counts[std::to_string(n) + ":" + join(ops, i, i + n)] += 1.0;
        }
      }
      signature[b.id] = join(ops, 0, ops.size());
    }
    for (const auto& [src, dst] : f.edges) {
      counts["E:" + signature[src] + ">" + signature[dst]] += 1.0;
    }
  }
  double norm = 0.0;
  for (const auto& [k, v] : counts) norm += v * v;
  norm = std::sqrt(norm);
  SparseVector out;
  out.reserve(counts.size());
  for (auto& [k, v] : counts) out.emplace_back(k, norm > 0.0 ? v / norm : 0.0);
  return out;
}

double cosine(const SparseVector& a, const SparseVector& b) {
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (const auto& x : a) na += x.second * x.second;
  for (const auto& x : b) nb += x.second * x.second;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (i->first < j->first) {
      ++i;
    } else if (j->first < i->first) {
      ++j;
    } else {
      dot += i->second * j->second;
      ++i;
      ++j;
    }
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> cosine_scores(const CorpusManifest& train,
                                  const std::vector<VerificationPair>& pairs,
                                  CfgStore& store) {
  std::map<std::string, SparseVector> features;
  auto feat = [&](const std::string& path) -> const SparseVector& {
    auto it = features.find(path);
    if (it == features.end()) {
      it = features.emplace(path, cosine_features(store.get(path))).first;
    }
    return it->second;
  };
  std::map<std::string, SparseVector> profiles;
  auto profile = [&](const std::string& author) -> const SparseVector& {
    auto it = profiles.find(author);
    if (it != profiles.end()) return it->second;
    const ManifestAuthor* a = train.find(author);
    if (a == nullptr || a->samples.empty()) {
      throw Error(ErrorCode::UnknownAuthor,
                  "author '" + author + "' has no training sample");
    }
    std::map<std::string, double> sum;
    for (const auto& s : a->samples) {
      for (const auto& [k, v] : feat(s)) sum[k] += v;
    }
    SparseVector p;
    const double n = static_cast<double>(a->samples.size());
    for (const auto& [k, v] : sum) p.emplace_back(k, v / n);
    return profiles.emplace(author, std::move(p)).first->second;
  };
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& pr : pairs) {
    out.push_back(cosine(profile(pr.author_id), feat(pr.path)));
  }
  return out;
}

MetricReport cosine_baseline(const CorpusManifest& train,
                             const std::vector<VerificationPair>& pairs,
                             CfgStore& store) {
  const auto scores = cosine_scores(train, pairs, store);
  std::vector<ScoredLabel> sl;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    sl.push_back({scores[i], pairs[i].label});
  }
  return metric_report(sl, {{"method", "cosine"}});
}

std::vector<PairRecord> read_pairs(std::istream& in) {
  std::vector<PairRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string ctx = "pairs line " + std::to_string(lineno);
    try {
      const json j = json::parse(line);
      PairRecord r;
      r.pair.author_id = j.at("author_id").get<std::string>();
      r.pair.path = j.at("path").get<std::string>();
      const json& lab = j.at("label");
      if (lab.is_boolean()) {
        r.pair.label = lab.get<bool>();
      } else if (lab.is_number_integer()) {
        r.pair.label = lab.get<int>() != 0;
      } else {
        const auto s = lab.get<std::string>();
        if (s != "positive" && s != "negative") {
          throw Error(ErrorCode::MalformedInput, ctx + ": bad label '" + s + "'");
        }
        r.pair.label = s == "positive";
      }
      if (j.contains("origin")) {
        const auto o = j["origin"].get<std::string>();
        r.pair.origin = o == "wild"               ? NegativeOrigin::Wild
                        : o == "in_candidate_set" ? NegativeOrigin::InSet
                                                  : NegativeOrigin::None;
      }
      if (j.contains("true_author")) {
        r.pair.true_author = j["true_author"].get<std::string>();
      }
      if (j.contains("score") && !j["score"].is_null()) {
        r.score = j["score"].get<double>();
      }
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedInput, ctx + ": " + e.what());
    }
  }
  return out;
}

void write_pairs(std::ostream& out, const std::vector<VerificationPair>& pairs) {
  for (const auto& p : pairs) {
    json j = {{"author_id", p.author_id},
              {"path", p.path},
              {"label", p.label ? "positive" : "negative"},
              {"origin", std::string(to_string(p.origin))},
              {"true_author", p.true_author}};
    out << j.dump() << '\n';
  }
}

}  // namespace flowlm
