// Copyright 2026 The softembed Authors
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

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "softembed/encoder.hpp"
#include "softembed/optimizer.hpp"
#include "softembed/tokenizer.hpp"

namespace softembed {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to continue a run from a step boundary.
///
/// Binary layout (little-endian):
///   "SEMBCKPT"  u32 version
///   str encoder config (key=value lines)
///   str tokenizer (vocab size, then one word per line)
///   u64 array count, then per array: str name, u32 rank, u64 dims..., f64 data...
///   str state (JSON)
///   u64 FNV-1a hash of every preceding byte
/// where str = u64 byte length + bytes. Optimizer moments are stored as
/// arrays named "opt.m/<param>" and "opt.v/<param>".
struct Checkpoint {
  EncoderConfig config;
  Tokenizer tokenizer;
  ParameterMap params;
  AdamW optimizer;
  /// Opaque run state (stage, step, miner, ...) as JSON text.
  std::string state = "{}";
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws CheckpointError on a bad magic, version, hash or truncated file,
/// and on a config different from `expected` (when given), printing both.
Checkpoint load_checkpoint(const std::filesystem::path& path, const EncoderConfig* expected = nullptr);

std::string serialize_tokenizer(const Tokenizer& tok);
Tokenizer deserialize_tokenizer(const std::string& text);

}  // namespace softembed
