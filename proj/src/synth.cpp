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

#include "flowlm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "flowlm/error.hpp"
#include "flowlm/random.hpp"

namespace flowlm {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

enum SeedTag : std::uint64_t { kPatterns = 11, kAuthors, kBinaries, kPrior };

constexpr const char* kMnemonics[] = {
    "mov",  "push", "pop",   "call", "ret",  "lea",  "add",   "sub",
    "cmp",  "test", "jmp",   "je",   "jne",  "jg",   "jl",    "and",
    "or",   "xor",  "shl",   "shr",  "imul", "idiv", "inc",   "dec",
    "nop",  "movzx", "movsx", "cdq", "sete", "setne", "cmovl", "cmovg",
    "neg",  "not",  "sar",   "leave", "jae", "jbe",  "ja",    "jb",
    "movss", "movsd", "addsd", "mulsd", "subsd", "divsd", "cvtsi2sd",
    "pxor", "movaps", "movups", "rep",  "stosb", "bt",  "xchg",  "sbb",
    "adc",  "rol",  "ror",   "js",   "jns",  "div",  "mul",   "cqo",
};

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorCode::InvalidConfig, what);
}

std::vector<double> normalized(std::vector<double> v) {
  double total = 0.0;
  for (double x : v) total += x;
  for (double& x : v) x /= total;
  return v;
}

// Sparse probability vector: `support` random entries with Dirichlet(1)
// weights.
std::vector<double> sparse_row(std::size_t size, std::size_t support, Rng& rng) {
  std::vector<std::size_t> idx(size);
  for (std::size_t i = 0; i < size; ++i) idx[i] = i;
  shuffle(idx, rng);
  std::vector<double> row(size, 0.0);
  for (std::size_t k = 0; k < support; ++k) {
    row[idx[k]] = -std::log1p(-uniform01(rng)) + 1e-12;
  }
  return normalized(std::move(row));
}

std::vector<double> dirichlet(std::size_t size, double alpha, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> v(size);
  double total = 0.0;
  for (double& x : v) {
    x = gamma(rng);
    total += x;
  }
  if (!(total > 0.0)) {
    std::fill(v.begin(), v.end(), 0.0);
    v[uniform_index(rng, size)] = 1.0;
    return v;
  }
  for (double& x : v) x /= total;
  return v;
}

std::size_t draw(const std::vector<double>& p, Rng& rng) {
  return sample_discrete(p, rng);
}

std::string pad(std::size_t i) {
  std::string s = std::to_string(i);
  return s.size() < 2 ? "0" + s : s;
}

Cfg make_binary(const SynthConfig& c, const std::vector<std::string>& alphabet,
                const std::vector<StylePattern>& patterns,
                const std::vector<double>& weights, std::string binary_id,
                Rng& rng) {
  Cfg cfg;
  cfg.binary_id = std::move(binary_id);
  std::uint64_t next_id = 0;
  std::size_t remaining = c.blocks_per_binary;
  std::size_t fn = 0;
  while (remaining > 0) {
    const std::size_t nb = std::min(remaining, c.blocks_per_function);
    remaining -= nb;
    Function f;
    f.name = "sub_" + std::to_string(fn++);
    for (std::size_t b = 0; b < nb; ++b) {
      BasicBlock block;
      block.id = next_id++;
      const StylePattern& p = patterns[draw(weights, rng)];
      std::size_t x = draw(p.initial, rng);
      block.opcodes.push_back(alphabet[x]);
      for (std::size_t t = 1; t < c.opcodes_per_block; ++t) {
        x = draw(p.transition[x], rng);
        block.opcodes.push_back(alphabet[x]);
      }
      f.blocks.push_back(std::move(block));
    }
    std::set<Edge> seen;
    auto add = [&](std::size_t a, std::size_t b) {
      const Edge e{f.blocks[a].id, f.blocks[b].id};
      if (seen.insert(e).second) f.edges.push_back(e);
    };
    for (std::size_t b = 1; b < nb; ++b) add(uniform_index(rng, b), b);
    if (nb > 1) {
      for (std::size_t k = 0; k < nb / 3; ++k) {
        add(uniform_index(rng, nb), uniform_index(rng, nb));
      }
    }
    cfg.functions.push_back(std::move(f));
  }
  return cfg;
}

std::vector<double> style(const SynthConfig& c, Rng& rng) {
  const double uniform_w = 1.0 / static_cast<double>(c.patterns);
  const auto q = dirichlet(c.patterns, c.concentration, rng);
  std::vector<double> w;
  for (double x : q) {
    w.push_back((1.0 - c.separation) * uniform_w + c.separation * x);
  }
  return normalized(std::move(w));
}

double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

void SynthConfig::validate() const {
  if (authors == 0 || train_samples == 0 || test_samples == 0 ||
      blocks_per_binary == 0 || blocks_per_function == 0 ||
      opcodes_per_block == 0 || alphabet == 0 || patterns == 0 ||
      row_support == 0) {
    invalid("synthetic corpus counts must be positive");
  }
  if (row_support > alphabet) invalid("row_support exceeds the alphabet");
  if (!(separation >= 0.0 && separation <= 1.0)) {
    invalid("separation must be in [0, 1]");
  }
  if (!(concentration > 0.0)) invalid("concentration must be positive");
}

json to_json(const SynthConfig& c) {
  return {{"authors", c.authors},
          {"train_samples", c.train_samples},
          {"test_samples", c.test_samples},
          {"wild_authors", c.wild_authors},
          {"wild_samples", c.wild_samples},
          {"pretrain_authors", c.pretrain_authors},
          {"pretrain_samples", c.pretrain_samples},
          {"blocks_per_binary", c.blocks_per_binary},
          {"blocks_per_function", c.blocks_per_function},
          {"opcodes_per_block", c.opcodes_per_block},
          {"alphabet", c.alphabet},
          {"patterns", c.patterns},
          {"row_support", c.row_support},
          {"separation", c.separation},
          {"concentration", c.concentration},
          {"seed", c.seed}};
}

SynthConfig apply_json(const json& doc, SynthConfig c) {
  if (!doc.is_object()) invalid("synthetic config must be a JSON object");
  try {
    for (const auto& [key, v] : doc.items()) {
      if (key == "authors") c.authors = v.get<std::size_t>();
      else if (key == "train_samples") c.train_samples = v.get<std::size_t>();
      else if (key == "test_samples") c.test_samples = v.get<std::size_t>();
      else if (key == "wild_authors") c.wild_authors = v.get<std::size_t>();
      else if (key == "wild_samples") c.wild_samples = v.get<std::size_t>();
      else if (key == "pretrain_authors") c.pretrain_authors = v.get<std::size_t>();
      else if (key == "pretrain_samples") c.pretrain_samples = v.get<std::size_t>();
      else if (key == "blocks_per_binary") c.blocks_per_binary = v.get<std::size_t>();
      else if (key == "blocks_per_function") c.blocks_per_function = v.get<std::size_t>();
      else if (key == "opcodes_per_block") c.opcodes_per_block = v.get<std::size_t>();
      else if (key == "alphabet") c.alphabet = v.get<std::size_t>();
      else if (key == "patterns") c.patterns = v.get<std::size_t>();
      else if (key == "row_support") c.row_support = v.get<std::size_t>();
      else if (key == "separation") c.separation = v.get<double>();
      else if (key == "concentration") c.concentration = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else invalid("unknown synthetic config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    invalid(std::string("synthetic config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string_view to_string(SynthGroup g) {
  switch (g) {
    case SynthGroup::Candidate: return "candidate";
    case SynthGroup::Wild: return "wild";
    case SynthGroup::External: return "external";
  }
  return "candidate";
}

const SynthAuthor& SynthCorpus::author(std::string_view author_id) const {
  for (const auto& a : authors) {
    if (a.author_id == author_id) return a;
  }
  throw Error(ErrorCode::UnknownAuthor,
              "no synthetic author '" + std::string(author_id) + "'");
}

const SynthBinary& SynthCorpus::binary(std::string_view binary_id) const {
  for (const auto& b : binaries) {
    if (b.cfg.binary_id == binary_id) return b;
  }
  throw Error(ErrorCode::UnknownBinary,
              "no synthetic binary '" + std::string(binary_id) + "'");
}

CorpusManifest SynthCorpus::manifest(std::string_view role,
                                     const fs::path& root) const {
  CorpusManifest m;
  m.role = role == "pretrain" ? CorpusRole::Pretrain
           : role == "train"  ? CorpusRole::Train
                              : CorpusRole::Test;
  std::map<std::string, std::size_t> index;
  for (const auto& b : binaries) {
    if (b.role != role) continue;
    auto [it, fresh] = index.try_emplace(b.author_id, m.authors.size());
    if (fresh) m.authors.push_back({b.author_id, {}});
    m.authors[it->second].samples.push_back((root / b.path).string());
  }
  return m;
}

void SynthCorpus::fill_store(CfgStore& store, const fs::path& root) const {
  for (const auto& b : binaries) store.put((root / b.path).string(), b.cfg);
}

json SynthCorpus::truth() const {
  json pats = json::array();
  for (const auto& p : patterns) {
    pats.push_back({{"initial", p.initial}, {"transition", p.transition}});
  }
  json auths = json::array();
  for (const auto& a : authors) {
    auths.push_back({{"author_id", a.author_id},
                     {"group", std::string(to_string(a.group))},
                     {"weights", a.weights}});
  }
  json bins = json::array();
  for (const auto& b : binaries) {
    bins.push_back({{"binary_id", b.cfg.binary_id},
                    {"author_id", b.author_id},
                    {"role", b.role},
                    {"path", b.path}});
  }
  return {{"config", to_json(config)},
          {"alphabet", alphabet},
          {"patterns", pats},
          {"authors", auths},
          {"binaries", bins}};
}

SynthCorpus generate_corpus(const SynthConfig& config) {
  config.validate();
  SynthCorpus corpus;
  corpus.config = config;
  constexpr std::size_t kNamed = std::size(kMnemonics);
  for (std::size_t i = 0; i < config.alphabet; ++i) {
    corpus.alphabet.push_back(i < kNamed ? kMnemonics[i]
                                         : "op" + std::to_string(i));
  }
  Rng prng(derive_seed(config.seed, kPatterns));
  const std::size_t a = config.alphabet;
  for (std::size_t p = 0; p < config.patterns; ++p) {
    StylePattern pat;
    pat.initial = sparse_row(a, config.row_support, prng);
    for (std::size_t x = 0; x < a; ++x) {
      pat.transition.push_back(sparse_row(a, config.row_support, prng));
    }
    corpus.patterns.push_back(std::move(pat));
  }

  auto add_authors = [&](SynthGroup g, std::size_t count, const char* prefix) {
    for (std::size_t i = 0; i < count; ++i) {
      Rng rng(derive_seed(config.seed, kAuthors, corpus.authors.size()));
      SynthAuthor au;
      au.author_id = prefix + pad(i);
      au.group = g;
      au.weights = style(config, rng);
      corpus.authors.push_back(std::move(au));
    }
  };
  add_authors(SynthGroup::Candidate, config.authors, "author");
  add_authors(SynthGroup::Wild, config.wild_authors, "wild");
  add_authors(SynthGroup::External, config.pretrain_authors, "ext");

  auto add_binaries = [&](const SynthAuthor& au, const char* role,
                          std::size_t count) {
    for (std::size_t k = 0; k < count; ++k) {
      Rng rng(derive_seed(config.seed, kBinaries, corpus.binaries.size()));
      std::string id = au.author_id + "_" + role + "_" + pad(k);
      SynthBinary b;
      b.cfg = make_binary(config, corpus.alphabet, corpus.patterns, au.weights,
                          id, rng);
      b.author_id = au.author_id;
      b.role = role;
      b.path = "binaries/" + id + ".json";
      corpus.binaries.push_back(std::move(b));
    }
  };
  for (const auto& au : corpus.authors) {
    switch (au.group) {
      case SynthGroup::Candidate:
        add_binaries(au, "train", config.train_samples);
        add_binaries(au, "test", config.test_samples);
        break;
      case SynthGroup::Wild:
        add_binaries(au, "wild", config.wild_samples);
        break;
      case SynthGroup::External:
        add_binaries(au, "pretrain", config.pretrain_samples);
        break;
    }
  }
  return corpus;
}

void write_corpus(const SynthCorpus& corpus, const fs::path& dir) {
  fs::create_directories(dir / "binaries");
  for (const auto& b : corpus.binaries) save_cfg(b.cfg, dir / b.path);
  for (const char* role : {"train", "test", "wild", "pretrain"}) {
    // Manifest paths stay relative so the corpus directory can move.
    save_manifest(corpus.manifest(role, ""), dir / (std::string(role) + ".json"));
  }
  std::ofstream out(dir / "truth.json", std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write truth.json");
  out << corpus.truth().dump(1) << '\n';
}

namespace {

// log P(block | pattern) for every block and pattern; also the opcode total.
std::vector<std::vector<double>> block_loglik(const SynthCorpus& corpus,
                                              const Cfg& binary,
                                              std::size_t* opcodes) {
  std::map<std::string, std::size_t, std::less<>> index;
  for (std::size_t i = 0; i < corpus.alphabet.size(); ++i) {
    index.emplace(corpus.alphabet[i], i);
  }
  std::vector<std::vector<double>> out;
  std::vector<std::size_t> xs;
  *opcodes = 0;
  for (const auto& f : binary.functions) {
    for (const auto& b : f.blocks) {
      xs.clear();
      for (const auto& op : b.opcodes) {
        const auto it = index.find(op);
        if (it == index.end()) {
          throw Error(ErrorCode::UnknownBinary,
                      "opcode '" + op + "' is not in the synthetic alphabet");
        }
        xs.push_back(it->second);
      }
      if (xs.empty()) continue;
      std::vector<double> row;
      for (const auto& pat : corpus.patterns) {
        double lp = std::log(pat.initial[xs[0]]);
        for (std::size_t t = 1; t < xs.size() && std::isfinite(lp); ++t) {
          lp += std::log(pat.transition[xs[t - 1]][xs[t]]);
        }
        row.push_back(lp);
      }
      out.push_back(std::move(row));
      *opcodes += xs.size();
    }
  }
  if (*opcodes == 0) {
    throw Error(ErrorCode::EmptyBinary, "binary has no opcode");
  }
  return out;
}

double mixture_loglik(const std::vector<std::vector<double>>& blocks,
                      const std::vector<double>& weights) {
  std::vector<double> log_w;
  for (double w : weights) log_w.push_back(std::log(w));
  std::vector<double> terms(weights.size());
  double total = 0.0;
  for (const auto& row : blocks) {
    for (std::size_t p = 0; p < row.size(); ++p) terms[p] = log_w[p] + row[p];
    total += std::max(log_sum_exp(terms), std::log(1e-300));
  }
  return total;
}

}  // namespace

double bayes_oracle_score(const SynthCorpus& corpus, const Cfg& binary,
                          const SynthAuthor& author) {
  std::size_t opcodes = 0;
  const auto blocks = block_loglik(corpus, binary, &opcodes);
  return mixture_loglik(blocks, author.weights) / static_cast<double>(opcodes);
}

std::vector<std::vector<double>> prior_styles(const SynthCorpus& corpus,
                                              std::size_t count) {
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < count; ++k) {
    Rng rng(derive_seed(corpus.config.seed, kPrior, k));
    out.push_back(style(corpus.config, rng));
  }
  return out;
}

double oracle_detection(const SynthCorpus& corpus, const Cfg& binary,
                        const SynthAuthor& author,
                        const std::vector<std::vector<double>>& prior) {
  if (prior.empty()) {
    throw Error(ErrorCode::InvalidConfig, "prior sample is empty");
  }
  std::size_t opcodes = 0;
  const auto blocks = block_loglik(corpus, binary, &opcodes);
  std::vector<double> marginal;
  for (const auto& w : prior) marginal.push_back(mixture_loglik(blocks, w));
  const double log_mean =
      log_sum_exp(marginal) - std::log(static_cast<double>(prior.size()));
  return mixture_loglik(blocks, author.weights) - log_mean;
}

LossArray oracle_loss_array(const SynthCorpus& corpus, const Cfg& binary,
                            const std::vector<std::string>& candidates) {
  LossArray out{binary.binary_id, {}};
  for (const auto& id : candidates) {
    out.losses.push_back(-bayes_oracle_score(corpus, binary, corpus.author(id)));
  }
  return out;
}

}  // namespace flowlm
