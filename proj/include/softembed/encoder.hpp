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

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "softembed/mask_schedule.hpp"
#include "softembed/ops.hpp"
#include "softembed/tensor.hpp"

namespace softembed {

enum class PoolingMode { kMean, kLastToken };

std::string_view to_string(PoolingMode mode);
PoolingMode parse_pooling_mode(std::string_view name);

/// Shape of the encoder. Defaults are a desk-scale model that keeps the
/// few-layers / wide-hidden / 4:1 grouped-query proportions.
struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t hidden_dim = 64;
  std::size_t heads = 8;
  std::size_t kv_heads = 2;
  std::size_t ffn_dim = 128;
  std::size_t vocab_size = 512;
  std::size_t max_len = 64;
  PoolingMode pooling = PoolingMode::kMean;
  std::vector<std::size_t> mrl_dims{16, 32, 64};

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;
  std::size_t head_dim() const { return hidden_dim / heads; }

  /// "key=value" lines, one per field, in a fixed order.
  std::string serialize() const;
  static EncoderConfig deserialize(const std::string& text);

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

using ParameterMap = std::map<std::string, Tensor>;

/// Watches every parameter on `tape`, returning tracked copies.
ParameterMap watch_all(Tape& tape, const ParameterMap& params);

/// Several token sequences laid end to end.
struct PackedBatch {
  std::vector<int> tokens;
  std::vector<Segment> segments;

  static PackedBatch pack(const std::vector<std::vector<int>>& sequences);
  std::size_t size() const { return segments.size(); }
};

/// L2-normalized sentence vector; `vector.size() == dim_used`.
struct SentenceEmbedding {
  std::vector<double> vector;
  std::size_t dim_used = 0;
  std::optional<std::string> language;
};

/// Fixed sinusoidal position table row for position `pos`.
void sinusoidal_position(std::size_t pos, std::span<double> out);

class Encoder {
 public:
  /// Random initialization from `seed`.
  Encoder(EncoderConfig config, std::uint64_t seed);
  /// Adopts existing weights; throws CheckpointError on missing or
  /// mis-shaped parameters.
  Encoder(EncoderConfig config, ParameterMap params);

  const EncoderConfig& config() const noexcept { return config_; }
  const ParameterMap& parameters() const noexcept { return params_; }
  ParameterMap& mutable_parameters() noexcept { return params_; }

  /// Token states [T x hidden] for a packed batch using `params` (which may
  /// be tracked copies of parameters()). One mask per segment.
  Tensor forward(const ParameterMap& params, const PackedBatch& batch,
                 std::span<const AttentionMask> masks) const;

  /// Untracked single-sequence states [L x hidden].
  Tensor encode(std::span<const int> tokens, const AttentionMask& mask) const;

  /// Pooled, not yet normalized, sentence vectors [B x hidden].
  Tensor pool_batch(const Tensor& states, const PackedBatch& batch) const;

  /// Tied-embedding language-model logits [T x vocab].
  Tensor lm_logits(const ParameterMap& params, const Tensor& states) const;

  static std::vector<std::string> parameter_names(const EncoderConfig& config);
  static Shape parameter_shape(const EncoderConfig& config, const std::string& name);

 private:
  void check_tokens(const PackedBatch& batch) const;

  EncoderConfig config_;
  ParameterMap params_;
};

/// Mean or last-token pooling of an [L x hidden] state matrix, normalized.
/// Throws DomainError for a zero pooled vector.
SentenceEmbedding pool(const Tensor& states, PoolingMode mode);

/// First d coordinates, renormalized. d must be one of `mrl_dims` and no
/// larger than e.dim_used.
SentenceEmbedding mrl_truncate(const SentenceEmbedding& e, std::size_t d,
                               std::span<const std::size_t> mrl_dims);

}  // namespace softembed
