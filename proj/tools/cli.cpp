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


#include "cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flowlm/cfg.hpp"
#include "flowlm/error.hpp"
#include "flowlm/eval.hpp"
#include "flowlm/experiment.hpp"
#include "flowlm/model.hpp"
#include "flowlm/synth.hpp"
#include "flowlm/trace.hpp"
#include "flowlm/train.hpp"
#include "flowlm/verifier.hpp"
#include "json.hpp"

#ifndef FLOWLM_VERSION
#define FLOWLM_VERSION "0.0.0"
#endif

namespace flowlm {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Keys holding a manifest, a model bundle, or a plain input file; used both
// for path normalization and for the input hashes of the record.
const std::set<std::string> kManifestKeys = {
    "manifest", "pretrain_manifest", "test", "wild", "train", "cosine_train"};
const std::set<std::string> kModelKeys = {"pretrained", "model"};
const std::set<std::string> kFileKeys = {"pairs", "cfg"};

struct Command {
  std::string name;
  CLI::App* app = nullptr;
  json defaults = json::object();
  bool train_keys = false;
  bool synth_keys = false;
  std::vector<std::function<void(json&)>> overrides;
  std::string config_path;
  std::vector<std::string> params;
};

template <class T>
void option(Command& c, const std::string& flag, const std::string& key,
            const std::string& help) {
  auto holder = std::make_shared<T>();
  CLI::Option* o = c.app->add_option(flag, *holder, help);
  if constexpr (!std::is_same_v<T, std::string> &&
                requires { holder->begin(); }) {
    o->delimiter(',');
  }
  c.overrides.push_back([o, holder, key](json& v) {
    if (o->count() > 0) v[key] = *holder;
  });
}

void flag(Command& c, const std::string& name, const std::string& key,
          const std::string& help) {
  auto holder = std::make_shared<bool>(false);
  CLI::Option* o = c.app->add_flag(name, *holder, help);
  c.overrides.push_back([o, holder, key](json& v) {
    if (o->count() > 0) v[key] = *holder;
  });
}

void common_options(Command& c) {
  c.app->add_option("--config", c.config_path,
                    "JSON config or a reproducibility record to replay");
  c.app->add_option("--param", c.params, "key=value override (repeatable)");
  option<std::string>(c, "--out", "out", "output directory");
  option<std::uint64_t>(c, "--seed", "seed", "random seed");
  option<std::size_t>(c, "--threads", "threads", "worker cap");
  c.defaults["out"] = ".";
  c.defaults["seed"] = 0;
  c.defaults["threads"] = 1;
}

json load_json_file(const fs::path& path, bool usage) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (usage) throw UsageError("cannot read config " + path.string());
    throw Error(ErrorCode::MissingFile, "cannot read " + path.string());
  }
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    if (usage) throw UsageError("config " + path.string() + ": " + e.what());
    throw Error(ErrorCode::MalformedInput, path.string() + ": " + e.what());
  }
}

json parse_param_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

std::string absolute_path(const std::string& p) {
  if (p.empty()) return p;
  return fs::absolute(p).lexically_normal().string();
}

// defaults < config file < --param < explicit flags.
json effective_config(const Command& c) {
  json v = c.defaults;
  if (!c.config_path.empty()) {
    json doc = load_json_file(c.config_path, true);
    if (doc.is_object() && doc.contains("command") && doc.contains("config")) {
      if (doc["command"] != c.name) {
        throw UsageError("record was written by '" +
                         doc["command"].get<std::string>() + "', not '" +
                         c.name + "'");
      }
      doc = doc["config"];
    }
    if (!doc.is_object()) throw UsageError("config must be a JSON object");
    for (const auto& [k, x] : doc.items()) v[k] = x;
  }
  for (const auto& p : c.params) {
    const auto eq = p.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw UsageError("--param expects key=value, got '" + p + "'");
    }
    v[p.substr(0, eq)] = parse_param_value(p.substr(eq + 1));
  }
  for (const auto& f : c.overrides) f(v);

  std::set<std::string> allowed;
  for (const auto& [k, x] : c.defaults.items()) allowed.insert(k);
  if (c.train_keys) {
    const json keys = to_json(TrainConfig{});
    for (const auto& [k, x] : keys.items()) allowed.insert(k);
  }
  if (c.synth_keys) {
    const json keys = to_json(SynthConfig{});
    for (const auto& [k, x] : keys.items()) allowed.insert(k);
  }
  for (const auto& [k, x] : v.items()) {
    if (!allowed.count(k)) {
      throw UsageError("unknown key '" + k + "' for " + c.name);
    }
  }
  for (auto& [k, x] : v.items()) {
    const bool is_path = k == "out" || kManifestKeys.count(k) ||
                         kModelKeys.count(k) || kFileKeys.count(k);
    if (!is_path) continue;
    if (x.is_string()) {
      x = absolute_path(x.get<std::string>());
    } else if (x.is_array()) {
      for (auto& e : x) {
        if (!e.is_string()) throw UsageError("'" + k + "' must list paths");
        e = absolute_path(e.get<std::string>());
      }
    } else if (!x.is_null()) {
      throw UsageError("'" + k + "' must be a path");
    }
  }
  return v;
}

template <class T>
T get(const json& v, const std::string& key) {
  try {
    return v.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError("bad value for '" + key + "': " + e.what());
  }
}

std::string required_path(const json& v, const std::string& key) {
  if (!v.contains(key) || !v[key].is_string() || v[key].get<std::string>().empty()) {
    throw UsageError("missing required option --" + key);
  }
  return v[key].get<std::string>();
}

std::optional<std::string> optional_path(const json& v, const std::string& key) {
  if (!v.contains(key) || v[key].is_null()) return std::nullopt;
  const auto s = get<std::string>(v, key);
  if (s.empty()) return std::nullopt;
  return s;
}

json subset(const json& v, const json& keys) {
  json out = json::object();
  for (const auto& [k, x] : keys.items()) {
    if (v.contains(k)) out[k] = v[k];
  }
  return out;
}

TrainConfig train_config(const json& v) {
  TrainConfig cfg = apply_json(subset(v, to_json(TrainConfig{})));
  cfg.validate();
  return cfg;
}

SynthConfig synth_config(const json& v) {
  SynthConfig cfg = apply_json(subset(v, to_json(SynthConfig{})), SynthConfig{});
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Output and provenance

void write_atomic(const fs::path& path,
                  const std::function<void(std::ostream&)>& fill) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    fill(out);
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw Error(ErrorCode::Io, "write failed: " + path.string());
    }
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& doc) {
  write_atomic(path, [&](std::ostream& o) { o << doc.dump(1) << '\n'; });
}

void save_bundle_atomic(const ModelBundle& bundle, const fs::path& path) {
  fs::path tmp = path;
  tmp += ".tmp";
  try {
    save_bundle(bundle, tmp);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    fs::remove(sidecar_path(tmp), ec);
    throw;
  }
  fs::rename(sidecar_path(tmp), sidecar_path(path));
  fs::rename(tmp, path);
}

std::string hex(const unsigned char* data, unsigned len) {
  std::ostringstream s;
  for (unsigned i = 0; i < len; ++i) {
    s << std::hex << std::setw(2) << std::setfill('0') << int(data[i]);
  }
  return s.str();
}

std::string sha256_string(const std::string& text) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr);
  return hex(md, len);
}

json manifest_hash(const std::string& path) {
  const CorpusManifest m = load_manifest(path);
  std::vector<std::string> samples;
  for (const auto& a : m.authors) {
    for (const auto& s : a.samples) samples.push_back(s);
  }
  std::sort(samples.begin(), samples.end());
  std::string joined;
  for (const auto& s : samples) joined += s + '\t' + sha256_file(s) + '\n';
  return {{"sha256", sha256_file(path)}, {"samples_sha256", sha256_string(joined)},
          {"samples", samples.size()}};
}

json input_hashes(const json& v) {
  json out = json::object();
  auto each_path = [&](const std::string& key, auto fn) {
    if (!v.contains(key)) return;
    const json& x = v[key];
    if (x.is_string() && !x.get<std::string>().empty()) {
      out[key] = fn(x.get<std::string>());
    } else if (x.is_array()) {
      json arr = json::array();
      for (const auto& e : x) arr.push_back(fn(e.get<std::string>()));
      out[key] = arr;
    }
  };
  for (const auto& k : kManifestKeys) each_path(k, manifest_hash);
  for (const auto& k : kModelKeys) {
    each_path(k, [](const std::string& p) {
      return json{{"sha256", sha256_file(p)},
                  {"sidecar_sha256", sha256_file(sidecar_path(p).string())}};
    });
  }
  for (const auto& k : kFileKeys) {
    each_path(k, [](const std::string& p) { return json{{"sha256", sha256_file(p)}}; });
  }
  return out;
}

void write_record(const Command& c, const json& v, const fs::path& out,
                  json extra = json::object()) {
  json rec = {{"command", c.name},
              {"version", FLOWLM_VERSION},
              {"seed", v.at("seed")},
              {"config", v},
              {"inputs", input_hashes(v)}};
  for (const auto& [k, x] : extra.items()) rec[k] = x;
  write_json(out / (c.name + ".record.json"), rec);
}

fs::path prepare_out(const json& v) {
  fs::path out = get<std::string>(v, "out");
  fs::create_directories(out);
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

int run_synth(const Command& c, const json& v, std::ostream& out) {
  const SynthConfig cfg = synth_config(v);
  const fs::path dir = prepare_out(v);
  const SynthCorpus corpus = generate_corpus(cfg);
  write_corpus(corpus, dir);
  write_record(c, v, dir);
  out << "wrote " << corpus.binaries.size() << " binaries to " << dir.string()
      << '\n';
  return kExitOk;
}

json cfg_summary(const std::string& path, const Cfg& cfg) {
  ExtractionStats stats;
  (void)ngram_sequences(cfg, 1, &stats);
  return {{"path", path},
          {"binary_id", cfg.binary_id},
          {"functions", cfg.functions.size()},
          {"blocks", cfg.block_count()},
          {"edges", cfg.edge_count()},
          {"opcodes", cfg.opcode_count()},
          {"edge_sequences", stats.edge_sequences}};
}

int run_ingest(const Command& c, const json& v, std::ostream& out) {
  const TrainConfig tc = train_config(v);
  const auto manifests = get<std::vector<std::string>>(v, "manifest");
  const auto cfgs = get<std::vector<std::string>>(v, "cfg");
  if (manifests.empty() && cfgs.empty()) {
    throw UsageError("ingest needs --manifest or --cfg");
  }
  CfgStore store;
  std::vector<std::string> order;
  json report = {{"manifests", json::array()}, {"cfgs", json::array()}};
  for (const auto& path : manifests) {
    const CorpusManifest m = load_manifest(path);
    json authors = json::array();
    for (const auto& a : validate_manifest(m)) {
      authors.push_back({{"author_id", a.author_id},
                         {"samples", a.sample_count},
                         {"empty", a.empty}});
    }
    report["manifests"].push_back({{"path", fs::path(path).filename().string()},
                                   {"role", to_string(m.role)},
                                   {"authors", authors}});
    for (const auto& a : m.authors) {
      for (const auto& s : a.samples) order.push_back(s);
    }
  }
  for (const auto& p : cfgs) order.push_back(p);
  std::set<std::string> seen;
  std::ostringstream dump;
  for (const auto& p : order) {
    if (!seen.insert(p).second) continue;
    const Cfg& cfg = store.get(p);
    report["cfgs"].push_back(cfg_summary(p, cfg));
    if (get<bool>(v, "dump")) {
      write_token_dump(dump, cfg.binary_id, ngram_sequences(cfg, tc.ngram));
    }
  }
  const fs::path dir = prepare_out(v);
  write_json(dir / "ingest.json", report);
  if (get<bool>(v, "dump")) {
    write_atomic(dir / "tokens.tsv", [&](std::ostream& o) { o << dump.str(); });
  }
  write_record(c, v, dir);
  out << "ingested " << seen.size() << " CFGs\n";
  return kExitOk;
}

int run_pretrain(const Command& c, const json& v, std::ostream& out) {
  const TrainConfig cfg = train_config(v);
  const CorpusManifest train_m = load_manifest(required_path(v, "manifest"));
  std::optional<CorpusManifest> pre_m;
  if (auto p = optional_path(v, "pretrain_manifest")) pre_m = load_manifest(*p);
  CfgStore store;
  const PreparedData data =
      prepare_data(train_m, pre_m ? &*pre_m : nullptr, store, cfg);
  std::ostringstream log_text;
  const PretrainModel pre =
      pretrain(data.pretrain, data.vocab.size(), cfg, jsonl_log(log_text));
  const fs::path dir = prepare_out(v);
  save_bundle_atomic({as_mos(pre), data.vocab, {"pretrain"}, cfg.trace()},
                     dir / "pretrain.bmlm");
  write_atomic(dir / "pretrain.jsonl", [&](std::ostream& o) { o << log_text.str(); });
  write_record(c, v, dir, {{"vocabulary", data.vocab.size()},
                           {"chunks", data.pretrain.size()}});
  out << "pretrained on " << data.pretrain.size() << " chunks, |V|="
      << data.vocab.size() << '\n';
  return kExitOk;
}

int run_train(const Command& c, const json& v, std::ostream& out) {
  TrainConfig cfg = train_config(v);
  const Architecture arch = parse_architecture(get<std::string>(v, "arch"));
  if (arch == Architecture::Naive) {
    throw UsageError("naive trains one model per author; use ablate");
  }
  const std::string stop = get<std::string>(v, "stop_after");
  if (stop != "" && stop != "joint") {
    throw UsageError("--stop-after accepts only 'joint'");
  }
  const ModelBundle base = load_bundle(required_path(v, "pretrained"));
  const CorpusManifest train_m = load_manifest(required_path(v, "manifest"));
  cfg.ngram = base.trace.ngram;
  cfg.hop = base.trace.hop;
  cfg.truncation = base.trace.truncation;
  cfg.hidden = base.model.shape().hidden;
  cfg.cell = base.model.shape().cell;
  if (stop == "joint") cfg.finetune_epochs = 0;

  CfgStore store;
  ExtractionStats stats;
  const AuthorCorpus corpus =
      encode_manifest(train_m, store, base.vocab, base.trace, &stats);
  std::ostringstream log_text;
  const TrainedSystem sys = train_system(arch, as_pretrain(base.model),
                                         corpus.chunks, cfg, jsonl_log(log_text));
  const fs::path dir = prepare_out(v);
  const MosModel& joint = sys.after_joint ? *sys.after_joint : sys.shared;
  save_bundle_atomic({joint, base.vocab, corpus.authors, base.trace},
                     dir / "joint.bmlm");
  if (stop != "joint") {
    save_bundle_atomic({sys.shared, base.vocab, corpus.authors, base.trace},
                       dir / "final.bmlm");
  }
  write_atomic(dir / "train.jsonl", [&](std::ostream& o) { o << log_text.str(); });
  write_record(c, v, dir, {{"effective_train", to_json(cfg)},
                           {"chunks", corpus.total_chunks()}});
  out << "trained " << to_string(arch) << " on " << corpus.authors.size()
      << " authors\n";
  return kExitOk;
}

json pair_line(const VerificationPair& p, std::optional<double> score) {
  json j = {{"author_id", p.author_id}, {"path", p.path}, {"label", p.label}};
  if (p.origin != NegativeOrigin::None) j["origin"] = to_string(p.origin);
  if (!p.true_author.empty()) j["true_author"] = p.true_author;
  if (score) j["score"] = *score;
  return j;
}

int run_verify(const Command& c, const json& v, std::ostream& out) {
  const ModelBundle bundle = load_bundle(required_path(v, "model"));
  std::vector<VerificationPair> pairs;
  if (auto p = optional_path(v, "pairs")) {
    std::ifstream in(*p);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot read " + *p);
    for (auto& r : read_pairs(in)) pairs.push_back(std::move(r.pair));
  } else {
    const auto test_path = optional_path(v, "test");
    const auto wild_path = optional_path(v, "wild");
    if (!test_path || !wild_path) {
      throw UsageError("verify needs --pairs or both --test and --wild");
    }
    const CorpusManifest test = load_manifest(*test_path);
    const CorpusManifest wild = load_manifest(*wild_path);
    std::optional<CorpusManifest> train;
    if (auto t = optional_path(v, "train")) train = load_manifest(*t);
    pairs = build_pairs(test, bundle.authors, wild, get<std::size_t>(v, "ratio"),
                        get<std::uint64_t>(v, "seed"), train ? &*train : nullptr);
  }
  CfgStore store;
  TrainedSystem sys;
  sys.shared = bundle.model;
  PairScorer scorer(sys, bundle.vocab, bundle.trace, bundle.authors, store);
  std::vector<std::string> paths;
  for (const auto& p : pairs) paths.push_back(p.path);
  scorer.prefetch(paths, get<std::size_t>(v, "threads"));
  std::ostringstream scores, scored;
  for (const auto& p : pairs) {
    const VerificationScore s = scorer.verify(p);
    scores << json{{"binary_id", s.binary_id}, {"author_id", s.author_id},
                   {"score", s.score},         {"loss", s.loss},
                   {"avg", s.avg},             {"var", s.var},
                   {"degenerate", s.degenerate}, {"path", p.path},
                   {"label", p.label}}
                  .dump()
           << '\n';
    scored << pair_line(p, -s.score).dump() << '\n';
  }
  const fs::path dir = prepare_out(v);
  write_atomic(dir / "scores.jsonl", [&](std::ostream& o) { o << scores.str(); });
  write_atomic(dir / "pairs.jsonl", [&](std::ostream& o) { o << scored.str(); });
  write_record(c, v, dir, {{"pairs", pairs.size()}});
  out << "scored " << pairs.size() << " pairs\n";
  return kExitOk;
}

int run_eval(const Command& c, const json& v, std::ostream& out) {
  const std::string pairs_path = required_path(v, "pairs");
  std::ifstream in(pairs_path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot read " + pairs_path);
  const auto records = read_pairs(in);
  std::vector<ScoredLabel> scores;
  std::vector<VerificationPair> pairs;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].score) {
      throw Error(ErrorCode::MalformedInput,
                  "pair " + std::to_string(i + 1) + " has no score");
    }
    scores.push_back({*records[i].score, records[i].pair.label});
    pairs.push_back(records[i].pair);
  }
  const json echo = {{"pairs", fs::path(pairs_path).filename().string()}};
  json report = to_json(metric_report(scores, echo));
  if (auto t = optional_path(v, "cosine_train")) {
    CfgStore store;
    MetricReport cos = cosine_baseline(load_manifest(*t), pairs, store);
    cos.config = {{"method", "cosine"}};
    report["cosine"] = to_json(cos);
  }
  const fs::path dir = prepare_out(v);
  write_json(dir / "metrics.json", report);
  if (get<bool>(v, "roc")) {
    const auto curve = roc_curve(scores);
    write_atomic(dir / "roc.csv", [&](std::ostream& o) { write_roc_csv(o, curve); });
  }
  write_record(c, v, dir);
  out << "auc_roc=" << report["auc_roc"].get<double>()
      << " ap=" << report["ap"].get<double>() << '\n';
  return kExitOk;
}

int run_ablate(const Command& c, const json& v, std::ostream& out) {
  const SynthConfig synth = synth_config(v);
  const TrainConfig base = train_config(v);
  const auto ngrams = get<std::vector<std::size_t>>(v, "ngrams");
  const auto hops = get<std::vector<std::size_t>>(v, "hops");
  std::vector<Architecture> archs;
  for (const auto& a : get<std::vector<std::string>>(v, "architectures")) {
    archs.push_back(parse_architecture(a));
  }
  const std::size_t threads = get<std::size_t>(v, "threads");
  const fs::path dir = prepare_out(v);

  auto one = [&](const TrainConfig& cfg, std::vector<Architecture> a, bool refs) {
    ExperimentOptions o;
    o.architectures = std::move(a);
    o.oracle = refs;
    o.cosine = refs;
    o.threads = threads;
    return run_synthetic(synth, cfg, o).to_json()["reports"];
  };
  const Architecture main_arch = Architecture::MosOptReg;
  json report = json::object();
  for (std::size_t n : ngrams) {
    TrainConfig cfg = base;
    cfg.ngram = n;
    cfg.validate();
    report["ngram"][std::to_string(n)] = one(cfg, {main_arch}, false)[std::string(to_string(main_arch))];
    out << "ngram " << n << " done\n";
  }
  for (std::size_t h : hops) {
    TrainConfig cfg = base;
    cfg.hop = h;
    cfg.validate();
    report["hop"][std::to_string(h)] = one(cfg, {main_arch}, false)[std::string(to_string(main_arch))];
    out << "hop " << h << " done\n";
  }
  if (!archs.empty()) {
    report["architecture"] = one(base, archs, true);
    out << "architectures done\n";
  }
  write_json(dir / "ablation.json", report);
  write_record(c, v, dir);
  return kExitOk;
}

int map_error(const Error& e, std::ostream& err) {
  err << "error: " << e.what() << '\n';
  return e.code() == ErrorCode::InvalidConfig ? kExitUsage : kExitData;
}

}  // namespace

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot read " + path);
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                               EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  return hex(md, len);
}

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out,
                 std::ostream& err) {
  CLI::App app{"Binary authorship verification with per-author language models",
               "flowlm"};
  app.set_version_flag("--version", FLOWLM_VERSION);
  app.require_subcommand(1);

  std::vector<std::unique_ptr<Command>> commands;
  auto add = [&](const std::string& name, const std::string& help) -> Command& {
    auto c = std::make_unique<Command>();
    c->name = name;
    c->app = app.add_subcommand(name, help);
    common_options(*c);
    commands.push_back(std::move(c));
    return *commands.back();
  };

  Command& synth = add("synth", "generate a synthetic corpus");
  synth.synth_keys = true;

  Command& ingest = add("ingest", "validate CFG-JSON files and manifests");
  ingest.train_keys = true;
  option<std::vector<std::string>>(ingest, "--manifest", "manifest", "corpus manifest");
  option<std::vector<std::string>>(ingest, "--cfg", "cfg", "CFG-JSON file");
  flag(ingest, "--dump", "dump", "write the n-gram token dump");
  ingest.defaults["manifest"] = json::array();
  ingest.defaults["cfg"] = json::array();
  ingest.defaults["dump"] = false;

  Command& pre = add("pretrain", "pre-train the shared language model");
  pre.train_keys = true;
  option<std::string>(pre, "--manifest", "manifest", "candidate training manifest");
  option<std::string>(pre, "--pretrain-manifest", "pretrain_manifest",
                      "external pre-training manifest");
  pre.defaults["manifest"] = "";
  pre.defaults["pretrain_manifest"] = "";

  Command& train = add("train", "joint training and decoder fine-tuning");
  train.train_keys = true;
  option<std::string>(train, "--pretrained", "pretrained", "pre-trained model");
  option<std::string>(train, "--manifest", "manifest", "candidate training manifest");
  option<std::string>(train, "--arch", "arch", "single-encoder|mos|mos+opt|mos+opt+reg");
  option<std::string>(train, "--stop-after", "stop_after", "joint");
  train.defaults["pretrained"] = "";
  train.defaults["manifest"] = "";
  train.defaults["arch"] = std::string(to_string(Architecture::MosOptReg));
  train.defaults["stop_after"] = "";

  Command& verify = add("verify", "score verification pairs");
  option<std::string>(verify, "--model", "model", "trained model");
  option<std::string>(verify, "--pairs", "pairs", "pairs file");
  option<std::string>(verify, "--test", "test", "test manifest");
  option<std::string>(verify, "--wild", "wild", "wild manifest");
  option<std::string>(verify, "--train", "train", "training manifest (leak check)");
  option<std::size_t>(verify, "--ratio", "ratio", "negatives per positive");
  verify.defaults["model"] = "";
  verify.defaults["pairs"] = "";
  verify.defaults["test"] = "";
  verify.defaults["wild"] = "";
  verify.defaults["train"] = "";
  verify.defaults["ratio"] = 1;

  Command& eval = add("eval", "metrics over scored pairs");
  option<std::string>(eval, "--pairs", "pairs", "scored pairs file");
  option<std::string>(eval, "--cosine-train", "cosine_train",
                      "training manifest for the cosine baseline");
  flag(eval, "--roc", "roc", "write roc.csv");
  eval.defaults["pairs"] = "";
  eval.defaults["cosine_train"] = "";
  eval.defaults["roc"] = false;

  Command& ablate = add("ablate", "variant sweep on a synthetic corpus");
  ablate.train_keys = true;
  ablate.synth_keys = true;
  option<std::vector<std::size_t>>(ablate, "--ngrams", "ngrams", "n-gram sizes");
  option<std::vector<std::size_t>>(ablate, "--hops", "hops", "hop counts");
  option<std::vector<std::string>>(ablate, "--arch", "architectures", "architectures");
  ablate.defaults["ngrams"] = {1, 2, 3, 4, 5};
  ablate.defaults["hops"] = {1, 2, 3};
  {
    json names = json::array();
    for (Architecture a : all_architectures()) names.push_back(to_string(a));
    ablate.defaults["architectures"] = names;
  }

  std::vector<std::string> argv_store{"flowlm"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const Command* chosen = nullptr;
  for (const auto& c : commands) {
    if (c->app->parsed()) chosen = c.get();
  }
  try {
    const json v = effective_config(*chosen);
    if (chosen->name == "synth") return run_synth(*chosen, v, out);
    if (chosen->name == "ingest") return run_ingest(*chosen, v, out);
    if (chosen->name == "pretrain") return run_pretrain(*chosen, v, out);
    if (chosen->name == "train") return run_train(*chosen, v, out);
    if (chosen->name == "verify") return run_verify(*chosen, v, out);
    if (chosen->name == "eval") return run_eval(*chosen, v, out);
    return run_ablate(*chosen, v, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    return map_error(e, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace flowlm
