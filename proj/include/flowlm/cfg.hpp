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

#ifndef FLOWLM_CFG_HPP
#define FLOWLM_CFG_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace flowlm {

// A straight-line run of instructions, operands already stripped.
struct BasicBlock {
  std::uint64_t id = 0;
  std::vector<std::string> opcodes;

  friend bool operator==(const BasicBlock&, const BasicBlock&) = default;
};

using Edge = std::pair<std::uint64_t, std::uint64_t>;

struct Function {
  std::string name;
  std::vector<BasicBlock> blocks;
  std::vector<Edge> edges;

  friend bool operator==(const Function&, const Function&) = default;
};

// Control-flow graph of one disassembled binary. Edges never cross
// functions.
struct Cfg {
  std::string binary_id;
  std::vector<Function> functions;

  std::size_t block_count() const;
  std::size_t edge_count() const;
  std::size_t opcode_count() const;

  friend bool operator==(const Cfg&, const Cfg&) = default;
};

// Separator joining mnemonics inside an n-gram token; mnemonics may not
// contain it.
inline constexpr char kTokenSeparator = '|';

// Lower-cases and trims a mnemonic. Throws MalformedInput when the result is
// empty, non-ASCII, non-printable, or contains the token separator.
std::string canonical_opcode(std::string_view raw);

// Parses the CFG-JSON interchange document. Empty blocks and every edge
// touching them are dropped, as are edges whose endpoints do not resolve and
// repeated edges. Throws MalformedInput on schema violations and
// EmptyProgram when no non-empty block survives.
Cfg parse_cfg(const nlohmann::json& doc);
Cfg load_cfg(const std::filesystem::path& path);

nlohmann::json to_json(const Cfg& cfg);
void save_cfg(const Cfg& cfg, const std::filesystem::path& path);

enum class CorpusRole { Pretrain, Train, Test };

std::string_view to_string(CorpusRole role);
CorpusRole parse_role(std::string_view text);

struct ManifestAuthor {
  std::string author_id;
  std::vector<std::string> samples;

  friend bool operator==(const ManifestAuthor&, const ManifestAuthor&) =
      default;
};

struct CorpusManifest {
  CorpusRole role = CorpusRole::Train;
  std::vector<ManifestAuthor> authors;

  const ManifestAuthor* find(std::string_view author_id) const;
  std::size_t sample_count() const;

  friend bool operator==(const CorpusManifest&, const CorpusManifest&) =
      default;
};

// Relative sample paths are resolved against `base_dir`.
CorpusManifest parse_manifest(const nlohmann::json& doc,
                              const std::filesystem::path& base_dir = {});
CorpusManifest load_manifest(const std::filesystem::path& path);

nlohmann::json to_json(const CorpusManifest& manifest);
void save_manifest(const CorpusManifest& manifest,
                   const std::filesystem::path& path);

struct AuthorSampleCount {
  std::string author_id;
  std::size_t sample_count = 0;
  bool empty = false;  // flagged, not an error

  friend bool operator==(const AuthorSampleCount&,
                         const AuthorSampleCount&) = default;
};

// Throws MalformedInput on a repeated author_id and MissingFile when a listed
// sample does not exist on disk.
std::vector<AuthorSampleCount> validate_manifest(
    const CorpusManifest& manifest);

// Path-keyed cache of loaded CFGs. In-memory graphs (synthetic corpora,
// mixed binaries) can be registered under any key.
class CfgStore {
 public:
  const Cfg& get(const std::string& path);
  void put(const std::string& path, Cfg cfg);
  bool contains(const std::string& path) const;
  std::size_t size() const { return cache_.size(); }

 private:
  std::map<std::string, Cfg> cache_;
};

}  // namespace flowlm

#endif  // FLOWLM_CFG_HPP
