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

#ifndef FLOWLM_ERROR_HPP
#define FLOWLM_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace flowlm {

enum class ErrorCode {
  MalformedInput,
  EmptyProgram,
  MissingFile,
  EmptyCorpus,
  ShapeMismatch,
  GraphConsumed,
  UnknownAuthor,
  EmptyBatch,
  EmptyBinary,
  EmptyAuthor,
  SingleAuthor,
  DegenerateArray,
  InsufficientSamples,
  OneClassOnly,
  ProportionInfeasible,
  InvalidConfig,
  UnknownBinary,
  Io,
};

std::string_view to_string(ErrorCode code);

// All library failures surface as this exception; the code says which
// contract was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedInput: return "MalformedInput";
    case ErrorCode::EmptyProgram: return "EmptyProgram";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::GraphConsumed: return "GraphConsumed";
    case ErrorCode::UnknownAuthor: return "UnknownAuthor";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::EmptyBinary: return "EmptyBinary";
    case ErrorCode::EmptyAuthor: return "EmptyAuthor";
    case ErrorCode::SingleAuthor: return "SingleAuthor";
    case ErrorCode::DegenerateArray: return "DegenerateArray";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::OneClassOnly: return "OneClassOnly";
    case ErrorCode::ProportionInfeasible: return "ProportionInfeasible";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::UnknownBinary: return "UnknownBinary";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace flowlm

#endif  // FLOWLM_ERROR_HPP
