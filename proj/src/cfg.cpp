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

#include "flowlm/cfg.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "flowlm/error.hpp"

namespace flowlm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorCode::MalformedInput, what);
}

const json& require(const json& obj, const char* key, const std::string& ctx) {
  auto it = obj.find(key);
  if (it == obj.end()) malformed(ctx + ": missing key '" + key + "'");
  return *it;
}

std::uint64_t as_block_id(const json& v, const std::string& ctx) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    auto x = v.get<std::int64_t>();
    if (x >= 0) return static_cast<std::uint64_t>(x);
  }
  malformed(ctx + ": block id must be a non-negative integer");
}

struct EdgeHash {
  std::size_t operator()(const Edge& e) const noexcept {
    return std::hash<std::uint64_t>()(e.first * 0x9e3779b97f4a7c15ULL ^
                                      e.second);
  }
};

Function parse_function(const json& fn, std::size_t index) {
  const std::string ctx = "function[" + std::to_string(index) + "]";
  if (!fn.is_object()) malformed(ctx + ": expected object");
  const json& name = require(fn, "name", ctx);
  if (!name.is_string()) malformed(ctx + ": name must be a string");
  const json& blocks = require(fn, "blocks", ctx);
  if (!blocks.is_array()) malformed(ctx + ": blocks must be an array");
  const json& edges = require(fn, "edges", ctx);
  if (!edges.is_array()) malformed(ctx + ": edges must be an array");

  Function out;
  out.name = name.get<std::string>();

  std::unordered_set<std::uint64_t> seen;
  std::unordered_set<std::uint64_t> kept;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string bctx = ctx + ".blocks[" + std::to_string(b) + "]";
    const json& blk = blocks[b];
    if (!blk.is_object()) malformed(bctx + ": expected object");
    BasicBlock block;
    block.id = as_block_id(require(blk, "id", bctx), bctx);
    if (!seen.insert(block.id).second) {
      malformed(bctx + ": duplicate block id " + std::to_string(block.id));
    }
    const json& ops = require(blk, "opcodes", bctx);
    if (!ops.is_array()) malformed(bctx + ": opcodes must be an array");
    block.opcodes.reserve(ops.size());
    for (const json& op : ops) {
      if (!op.is_string()) malformed(bctx + ": opcode must be a string");
      block.opcodes.push_back(canonical_opcode(op.get<std::string>()));
    }
    if (block.opcodes.empty()) continue;
    kept.insert(block.id);
    out.blocks.push_back(std::move(block));
  }

  std::unordered_set<Edge, EdgeHash> unique;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const std::string ectx = ctx + ".edges[" + std::to_string(e) + "]";
    const json& edge = edges[e];
    if (!edge.is_array() || edge.size() != 2) {
      malformed(ectx + ": edge must be a pair of block ids");
    }
    for (const json& end : edge) {
      if (!end.is_number_integer()) {
        malformed(ectx + ": edge endpoint must be an integer");
      }
    }
    // Negative endpoints cannot name a block; treat them as dangling.
    if (edge[0].get<std::int64_t>() < 0 || edge[1].get<std::int64_t>() < 0) {
      continue;
    }
    Edge parsed{edge[0].get<std::uint64_t>(), edge[1].get<std::uint64_t>()};
    if (!kept.count(parsed.first) || !kept.count(parsed.second)) continue;
    if (!unique.insert(parsed).second) continue;
    out.edges.push_back(parsed);
  }
  return out;
}

}  // namespace

std::size_t Cfg::block_count() const {
  std::size_t n = 0;
  for (const auto& f : functions) n += f.blocks.size();
  return n;
}

std::size_t Cfg::edge_count() const {
  std::size_t n = 0;
  for (const auto& f : functions) n += f.edges.size();
  return n;
}

std::size_t Cfg::opcode_count() const {
  std::size_t n = 0;
  for (const auto& f : functions) {
    for (const auto& b : f.blocks) n += b.opcodes.size();
  }
  return n;
}

std::string canonical_opcode(std::string_view raw) {
  auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
           c == '\v';
  };
  std::size_t begin = 0;
  std::size_t end = raw.size();
  while (begin < end && is_space(raw[begin])) ++begin;
  while (end > begin && is_space(raw[end - 1])) --end;
  if (begin == end) malformed("empty opcode mnemonic");
  std::string out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    const auto c = static_cast<unsigned char>(raw[i]);
    if (c < 0x20 || c > 0x7e) {
      malformed("opcode mnemonic is not printable ASCII: '" +
                std::string(raw) + "'");
    }
    if (c == static_cast<unsigned char>(kTokenSeparator)) {
      malformed("opcode mnemonic contains the reserved separator: '" +
                std::string(raw) + "'");
    }
    out.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a')
                                       : static_cast<char>(c));
  }
  return out;
}

Cfg parse_cfg(const json& doc) {
  if (!doc.is_object()) malformed("CFG document must be an object");
  const json& id = require(doc, "binary_id", "cfg");
  if (!id.is_string()) malformed("cfg: binary_id must be a string");
  const json& fns = require(doc, "functions", "cfg");
  if (!fns.is_array()) malformed("cfg: functions must be an array");

  Cfg cfg;
  cfg.binary_id = id.get<std::string>();
  for (std::size_t i = 0; i < fns.size(); ++i) {
    Function fn = parse_function(fns[i], i);
    if (fn.blocks.empty()) continue;
    cfg.functions.push_back(std::move(fn));
  }
  if (cfg.functions.empty()) {
    throw Error(ErrorCode::EmptyProgram,
                "binary '" + cfg.binary_id + "' has no non-empty block");
  }
  return cfg;
}

Cfg load_cfg(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  }
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    malformed(path.string() + ": " + e.what());
  }
  return parse_cfg(doc);
}

json to_json(const Cfg& cfg) {
  json fns = json::array();
  for (const auto& fn : cfg.functions) {
    json blocks = json::array();
    for (const auto& b : fn.blocks) {
      blocks.push_back({{"id", b.id}, {"opcodes", b.opcodes}});
    }
    json edges = json::array();
    for (const auto& [src, dst] : fn.edges) edges.push_back({src, dst});
    fns.push_back({{"name", fn.name}, {"blocks", blocks}, {"edges", edges}});
  }
  return {{"binary_id", cfg.binary_id}, {"functions", fns}};
}

void save_cfg(const Cfg& cfg, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << to_json(cfg).dump() << '\n';
}

std::string_view to_string(CorpusRole role) {
  switch (role) {
    case CorpusRole::Pretrain: return "pretrain";
    case CorpusRole::Train: return "train";
    case CorpusRole::Test: return "test";
  }
  return "train";
}

CorpusRole parse_role(std::string_view text) {
  if (text == "pretrain") return CorpusRole::Pretrain;
  if (text == "train") return CorpusRole::Train;
  if (text == "test") return CorpusRole::Test;
  malformed("unknown manifest role '" + std::string(text) + "'");
}

const ManifestAuthor* CorpusManifest::find(std::string_view author_id) const {
  for (const auto& a : authors) {
    if (a.author_id == author_id) return &a;
  }
  return nullptr;
}

std::size_t CorpusManifest::sample_count() const {
  std::size_t n = 0;
  for (const auto& a : authors) n += a.samples.size();
  return n;
}

CorpusManifest parse_manifest(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) malformed("manifest must be an object");
  CorpusManifest m;
  const json& role = require(doc, "role", "manifest");
  if (!role.is_string()) malformed("manifest: role must be a string");
  m.role = parse_role(role.get<std::string>());
  const json& authors = require(doc, "authors", "manifest");
  if (!authors.is_array()) malformed("manifest: authors must be an array");
  for (std::size_t i = 0; i < authors.size(); ++i) {
    const std::string ctx = "manifest.authors[" + std::to_string(i) + "]";
    const json& a = authors[i];
    if (!a.is_object()) malformed(ctx + ": expected object");
    const json& id = require(a, "author_id", ctx);
    if (!id.is_string()) malformed(ctx + ": author_id must be a string");
    const json& samples = require(a, "samples", ctx);
    if (!samples.is_array()) malformed(ctx + ": samples must be an array");
    ManifestAuthor author;
    author.author_id = id.get<std::string>();
    for (const json& s : samples) {
      if (!s.is_string()) malformed(ctx + ": sample path must be a string");
      fs::path p = s.get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      author.samples.push_back(p.lexically_normal().string());
    }
    m.authors.push_back(std::move(author));
  }
  return m;
}

CorpusManifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  }
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    malformed(path.string() + ": " + e.what());
  }
  return parse_manifest(doc, path.parent_path());
}

json to_json(const CorpusManifest& manifest) {
  json authors = json::array();
  for (const auto& a : manifest.authors) {
    authors.push_back({{"author_id", a.author_id}, {"samples", a.samples}});
  }
  return {{"role", std::string(to_string(manifest.role))},
          {"authors", authors}};
}

void save_manifest(const CorpusManifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << to_json(manifest).dump(2) << '\n';
}

std::vector<AuthorSampleCount> validate_manifest(
    const CorpusManifest& manifest) {
  std::set<std::string> ids;
  std::vector<AuthorSampleCount> out;
  for (const auto& a : manifest.authors) {
    if (!ids.insert(a.author_id).second) {
      malformed("duplicate author_id '" + a.author_id + "'");
    }
    for (const auto& s : a.samples) {
      std::error_code ec;
      if (!fs::is_regular_file(s, ec)) {
        throw Error(ErrorCode::MissingFile,
                    "sample of '" + a.author_id + "' not found: " + s);
      }
    }
    out.push_back({a.author_id, a.samples.size(), a.samples.empty()});
  }
  return out;
}

const Cfg& CfgStore::get(const std::string& path) {
  auto it = cache_.find(path);
  if (it == cache_.end()) it = cache_.emplace(path, load_cfg(path)).first;
  return it->second;
}

void CfgStore::put(const std::string& path, Cfg cfg) {
  cache_.insert_or_assign(path, std::move(cfg));
}

bool CfgStore::contains(const std::string& path) const {
  return cache_.count(path) != 0;
}

}  // namespace flowlm
