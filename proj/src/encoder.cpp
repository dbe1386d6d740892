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

#include "softembed/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "softembed/errors.hpp"
#include "softembed/rng.hpp"

namespace softembed {

std::string_view to_string(PoolingMode mode) {
  return mode == PoolingMode::kMean ? "mean" : "last-token";
}

PoolingMode parse_pooling_mode(std::string_view name) {
  if (name == "mean") return PoolingMode::kMean;
  if (name == "last-token" || name == "last") return PoolingMode::kLastToken;
  throw ConfigError("unknown pooling mode '" + std::string(name) + "'");
}

void EncoderConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("encoder config: " + m); };
  if (hidden_dim == 0 || heads == 0 || kv_heads == 0 || ffn_dim == 0 || max_len == 0) {
    fail("dimensions must be positive");
  }
  if (heads % kv_heads != 0) {
    fail("heads (" + std::to_string(heads) + ") not divisible by kv_heads (" + std::to_string(kv_heads) + ")");
  }
  if (hidden_dim % heads != 0) fail("hidden_dim not divisible by heads");
  if (vocab_size < 260) fail("vocab_size must be at least 260 (specials + bytes)");
  for (std::size_t i = 0; i < mrl_dims.size(); ++i) {
    if (mrl_dims[i] == 0 || mrl_dims[i] > hidden_dim) fail("mrl dim outside (0, hidden_dim]");
    if (i > 0 && mrl_dims[i] <= mrl_dims[i - 1]) fail("mrl dims must be strictly ascending");
  }
}

std::string EncoderConfig::serialize() const {
  std::ostringstream os;
  os << "layers=" << layers << "\nhidden_dim=" << hidden_dim << "\nheads=" << heads
     << "\nkv_heads=" << kv_heads << "\nffn_dim=" << ffn_dim << "\nvocab_size=" << vocab_size
     << "\nmax_len=" << max_len << "\npooling=" << to_string(pooling) << "\nmrl_dims=";
  for (std::size_t i = 0; i < mrl_dims.size(); ++i) os << (i ? "," : "") << mrl_dims[i];
  os << '\n';
  return os.str();
}

EncoderConfig EncoderConfig::deserialize(const std::string& text) {
  EncoderConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("encoder config: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    auto num = [&] { return static_cast<std::size_t>(std::stoull(val)); };
    if (key == "layers") c.layers = num();
    else if (key == "hidden_dim") c.hidden_dim = num();
    else if (key == "heads") c.heads = num();
    else if (key == "kv_heads") c.kv_heads = num();
    else if (key == "ffn_dim") c.ffn_dim = num();
    else if (key == "vocab_size") c.vocab_size = num();
    else if (key == "max_len") c.max_len = num();
    else if (key == "pooling") c.pooling = parse_pooling_mode(val);
    else if (key == "mrl_dims") {
      c.mrl_dims.clear();
      std::istringstream ds(val);
      std::string tok;
      while (std::getline(ds, tok, ','))
        if (!tok.empty()) c.mrl_dims.push_back(std::stoull(tok));
    } else {
      throw ConfigError("encoder config: unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

ParameterMap watch_all(Tape& tape, const ParameterMap& params) {
  ParameterMap out;
  for (const auto& [name, t] : params) out.emplace(name, tape.watch(t));
  return out;
}

PackedBatch PackedBatch::pack(const std::vector<std::vector<int>>& sequences) {
  PackedBatch b;
  for (const auto& s : sequences) {
    if (s.empty()) throw DataError("cannot pack an empty token sequence");
    b.segments.push_back({b.tokens.size(), s.size()});
    b.tokens.insert(b.tokens.end(), s.begin(), s.end());
  }
  return b;
}

void sinusoidal_position(std::size_t pos, std::span<double> out) {
  const std::size_t d = out.size();
  for (std::size_t i = 0; i < d; i += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
    out[i] = std::sin(static_cast<double>(pos) * freq);
    if (i + 1 < d) out[i + 1] = std::cos(static_cast<double>(pos) * freq);
  }
}

std::vector<std::string> Encoder::parameter_names(const EncoderConfig& c) {
  std::vector<std::string> names{"tok_emb"};
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    for (const char* s : {"attn_norm", "wq", "wk", "wv", "wo", "ffn_norm", "w1", "b1", "w2", "b2"})
      names.push_back(p + s);
  }
  names.push_back("final_norm");
  return names;
}

Shape Encoder::parameter_shape(const EncoderConfig& c, const std::string& name) {
  const std::size_t h = c.hidden_dim, kv = c.kv_heads * c.head_dim(), f = c.ffn_dim;
  if (name == "tok_emb") return {c.vocab_size, h};
  if (name == "final_norm") return {h};
  const auto dot = name.find('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  if (leaf == "attn_norm" || leaf == "ffn_norm" || leaf == "b2") return {h};
  if (leaf == "wq" || leaf == "wo") return {h, h};
  if (leaf == "wk" || leaf == "wv") return {h, kv};
  if (leaf == "w1") return {h, f};
  if (leaf == "b1") return {f};
  if (leaf == "w2") return {f, h};
  throw CheckpointError("unknown parameter '" + name + "'");
}

Encoder::Encoder(EncoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const double depth = std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(1, config_.layers)));
  for (const auto& name : parameter_names(config_)) {
    Tensor t(parameter_shape(config_, name));
    const auto dot = name.find('.');
    const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
    double stdev = 0.0;
    double constant = 0.0;
    if (leaf == "tok_emb") stdev = 1.0;
    else if (leaf == "attn_norm" || leaf == "ffn_norm" || leaf == "final_norm") constant = 1.0;
    else if (leaf == "wq" || leaf == "wk" || leaf == "wv" || leaf == "w1")
      stdev = 1.0 / std::sqrt(static_cast<double>(t.dim(0)));
    else if (leaf == "wo" || leaf == "w2")
      stdev = 1.0 / std::sqrt(static_cast<double>(t.dim(0))) / depth;
    for (auto& x : t.mutable_data()) x = stdev > 0.0 ? stdev * rng.normal() : constant;
    params_.emplace(name, std::move(t));
  }
}

Encoder::Encoder(EncoderConfig config, ParameterMap params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto names = parameter_names(config_);
  if (params_.size() != names.size()) {
    throw CheckpointError("expected " + std::to_string(names.size()) + " parameters, got " +
                          std::to_string(params_.size()));
  }
  for (const auto& name : names) {
    auto it = params_.find(name);
    if (it == params_.end()) throw CheckpointError("missing parameter '" + name + "'");
    const Shape want = parameter_shape(config_, name);
    if (it->second.shape() != want) {
      throw CheckpointError("parameter '" + name + "' has shape " + shape_string(it->second.shape()) +
                            ", expected " + shape_string(want));
    }
  }
}

void Encoder::check_tokens(const PackedBatch& batch) const {
  for (int id : batch.tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw DataError("unknown token id " + std::to_string(id));
    }
  }
  for (const auto& s : batch.segments) {
    if (s.length > config_.max_len) {
      throw DataError("sequence of " + std::to_string(s.length) + " tokens exceeds max_len " +
                      std::to_string(config_.max_len));
    }
  }
}

Tensor Encoder::forward(const ParameterMap& params, const PackedBatch& batch,
                        std::span<const AttentionMask> masks) const {
  check_tokens(batch);
  if (masks.size() != batch.segments.size()) throw ShapeError("forward: one mask per sequence required");
  for (std::size_t s = 0; s < masks.size(); ++s) {
    if (masks[s].n != batch.segments[s].length) {
      throw ShapeError("forward: mask of size " + std::to_string(masks[s].n) + " for sequence of " +
                       std::to_string(batch.segments[s].length) + " tokens");
    }
  }
  const std::size_t t = batch.tokens.size(), h = config_.hidden_dim;
  std::vector<std::size_t> ids(batch.tokens.begin(), batch.tokens.end());
  Tensor pe(Shape{t, h});
  for (const auto& s : batch.segments)
    for (std::size_t p = 0; p < s.length; ++p)
      sinusoidal_position(p, pe.mutable_data().subspan((s.offset + p) * h, h));

  std::vector<std::span<const double>> weights;
  weights.reserve(masks.size());
  for (const auto& m : masks) weights.push_back(m.weights());

  auto param = [&](const std::string& name) -> const Tensor& { return params.at(name); };
  Tensor x = add(select_rows(param("tok_emb"), ids), pe);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    const Tensor hn = rms_norm(x, param(p + "attn_norm"));
    const Tensor q = matmul(hn, param(p + "wq"));
    const Tensor k = matmul(hn, param(p + "wk"));
    const Tensor v = matmul(hn, param(p + "wv"));
    const Tensor a = grouped_attention(q, k, v, batch.segments, weights, config_.heads, config_.kv_heads);
    x = add(x, matmul(a, param(p + "wo")));
    const Tensor fn = rms_norm(x, param(p + "ffn_norm"));
    const Tensor mid = gelu(add(matmul(fn, param(p + "w1")), param(p + "b1")));
    x = add(x, add(matmul(mid, param(p + "w2")), param(p + "b2")));
  }
  return x;
}

Tensor Encoder::encode(std::span<const int> tokens, const AttentionMask& mask) const {
  PackedBatch b = PackedBatch::pack({std::vector<int>(tokens.begin(), tokens.end())});
  const AttentionMask masks[] = {mask};
  return forward(params_, b, masks);
}

Tensor Encoder::pool_batch(const Tensor& states, const PackedBatch& batch) const {
  return config_.pooling == PoolingMode::kMean ? segment_mean(states, batch.segments)
                                               : segment_last(states, batch.segments);
}

Tensor Encoder::lm_logits(const ParameterMap& params, const Tensor& states) const {
  const Tensor normed = rms_norm(states, params.at("final_norm"));
  return scale(matmul_nt(normed, params.at("tok_emb")),
               1.0 / std::sqrt(static_cast<double>(config_.hidden_dim)));
}

SentenceEmbedding pool(const Tensor& states, PoolingMode mode) {
  if (states.rank() != 2) throw ShapeError("pool: expected [L x hidden] states");
  const std::size_t len = states.rows(), h = states.cols();
  std::vector<double> v(h, 0.0);
  if (mode == PoolingMode::kMean) {
    for (std::size_t r = 0; r < len; ++r)
      for (std::size_t j = 0; j < h; ++j) v[j] += states.at(r, j);
    for (auto& x : v) x /= static_cast<double>(len);
  } else {
    for (std::size_t j = 0; j < h; ++j) v[j] = states.at(len - 1, j);
  }
  double ss = 0.0;
  for (double x : v) ss += x * x;
  if (!(ss > 0.0)) throw DomainError("pool: pooled vector has zero norm");
  const double n = std::sqrt(ss);
  for (auto& x : v) x /= n;
  return SentenceEmbedding{std::move(v), h, std::nullopt};
}

SentenceEmbedding mrl_truncate(const SentenceEmbedding& e, std::size_t d,
                               std::span<const std::size_t> mrl_dims) {
  if (std::find(mrl_dims.begin(), mrl_dims.end(), d) == mrl_dims.end()) {
    throw ConfigError("mrl_truncate: dimension " + std::to_string(d) + " is not configured");
  }
  if (d > e.vector.size()) {
    throw ConfigError("mrl_truncate: dimension " + std::to_string(d) + " exceeds embedding size " +
                      std::to_string(e.vector.size()));
  }
  if (d == e.vector.size()) return SentenceEmbedding{e.vector, d, e.language};
  std::vector<double> v(e.vector.begin(), e.vector.begin() + static_cast<std::ptrdiff_t>(d));
  double ss = 0.0;
  for (double x : v) ss += x * x;
  if (!(ss > 0.0)) throw DomainError("mrl_truncate: prefix has zero norm");
  const double n = std::sqrt(ss);
  for (auto& x : v) x /= n;
  return SentenceEmbedding{std::move(v), d, e.language};
}

}  // namespace softembed
