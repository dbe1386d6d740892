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

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "softembed/diagnostics.hpp"
#include "softembed/encoder.hpp"
#include "softembed/errors.hpp"
#include "softembed/mask_schedule.hpp"
#include "softembed/tokenizer.hpp"

namespace softembed {
namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.layers = 2;
  c.hidden_dim = 16;
  c.heads = 4;
  c.kv_heads = 2;
  c.ffn_dim = 24;
  c.vocab_size = 300;
  c.max_len = 12;
  c.mrl_dims = {4, 8, 16};
  return c;
}

const std::vector<int> kTokens = {1, 261, 270, 5, 280, 299, 262, 2};

TEST(EncoderConfig, ValidationRejectsBadShapes) {
  EncoderConfig c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.kv_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.mrl_dims = {8, 4};
  EXPECT_THROW(c.validate(), ConfigError);
  c.mrl_dims = {32};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(EncoderConfig, SerializeRoundTrip) {
  EncoderConfig c = small_config();
  c.pooling = PoolingMode::kLastToken;
  EXPECT_EQ(EncoderConfig::deserialize(c.serialize()), c);
  EXPECT_THROW(EncoderConfig::deserialize("layers=2\nwidth=3\n"), ConfigError);
}

TEST(Encoder, OutputShapeAndInputChecks) {
  const Encoder enc(small_config(), 7);
  const Tensor s = enc.encode(kTokens, causal_mask(kTokens.size()));
  EXPECT_EQ(s.rows(), kTokens.size());
  EXPECT_EQ(s.cols(), 16u);
  const std::vector<int> unknown = {1, 300};
  EXPECT_THROW(enc.encode(unknown, causal_mask(2)), DataError);
  const std::vector<int> too_long(13, 5);
  EXPECT_THROW(enc.encode(too_long, causal_mask(13)), DataError);
  EXPECT_THROW(enc.encode(kTokens, causal_mask(3)), ShapeError);
}

TEST(Encoder, CausalMaskIgnoresLaterTokens) {
  const Encoder enc(small_config(), 3);
  std::vector<int> changed = kTokens;
  changed.back() = 290;
  const Tensor a = enc.encode(kTokens, causal_mask(8));
  const Tensor b = enc.encode(changed, causal_mask(8));
  for (std::size_t i = 0; i < 7 * 16; ++i) ASSERT_EQ(a[i], b[i]) << "coordinate " << i;
  bool last_differs = false;
  for (std::size_t j = 0; j < 16; ++j) last_differs |= a.at(7, j) != b.at(7, j);
  EXPECT_TRUE(last_differs);
}

TEST(Encoder, CausalityHoldsForEveryPosition) {
  const Encoder enc(small_config(), 4);
  const Tensor base = enc.encode(kTokens, causal_mask(8));
  for (std::size_t p = 0; p < 8; ++p) {
    std::vector<int> changed = kTokens;
    changed[p] = changed[p] == 277 ? 278 : 277;
    const Tensor s = enc.encode(changed, causal_mask(8));
    for (std::size_t i = 0; i < p * 16; ++i) ASSERT_EQ(base[i], s[i]) << "changed " << p;
  }
}

TEST(Encoder, BidirectionalMaskSeesLaterTokens) {
  const Encoder enc(small_config(), 3);
  std::vector<int> changed = kTokens;
  changed.back() = 290;
  const Tensor a = enc.encode(kTokens, bidirectional_mask(8));
  const Tensor b = enc.encode(changed, bidirectional_mask(8));
  bool first_differs = false;
  for (std::size_t j = 0; j < 16; ++j) first_differs |= a.at(0, j) != b.at(0, j);
  EXPECT_TRUE(first_differs);
}

TEST(Encoder, ZeroLayersIsEmbeddingPlusPosition) {
  EncoderConfig c = small_config();
  c.layers = 0;
  const Encoder enc(c, 5);
  const Tensor s = enc.encode(kTokens, causal_mask(8));
  const Tensor& emb = enc.parameters().at("tok_emb");
  std::vector<double> pe(16);
  for (std::size_t p = 0; p < 8; ++p) {
    sinusoidal_position(p, pe);
    for (std::size_t j = 0; j < 16; ++j)
      EXPECT_EQ(s.at(p, j), emb.at(static_cast<std::size_t>(kTokens[p]), j) + pe[j]);
  }
}

TEST(Encoder, PackedBatchMatchesSeparateEncoding) {
  const Encoder enc(small_config(), 8);
  const std::vector<int> other = {1, 263, 2};
  const PackedBatch batch = PackedBatch::pack({kTokens, other});
  const AttentionMask masks[] = {bidirectional_mask(8), causal_mask(3)};
  const Tensor packed = enc.forward(enc.parameters(), batch, masks);
  const Tensor a = enc.encode(kTokens, masks[0]);
  const Tensor b = enc.encode(other, masks[1]);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(packed[i], a[i]);
  for (std::size_t i = 0; i < b.numel(); ++i) EXPECT_EQ(packed[a.numel() + i], b[i]);
}

// Plain-loop reference for one layer of full multi-head attention with a
// causal mask, written without the tensor library.
std::vector<double> reference_single_layer(const Encoder& enc, const std::vector<int>& tokens) {
  const auto& c = enc.config();
  const auto& p = enc.parameters();
  const std::size_t n = tokens.size(), h = c.hidden_dim, hd = c.head_dim();
  auto mat = [&](const std::vector<double>& x, const Tensor& w, std::size_t in, std::size_t out) {
    std::vector<double> y(n * out, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < in; ++k)
        for (std::size_t j = 0; j < out; ++j) y[r * out + j] += x[r * in + k] * w.at(k, j);
    return y;
  };
  auto norm = [&](const std::vector<double>& x, const Tensor& g) {
    std::vector<double> y(x.size());
    for (std::size_t r = 0; r < n; ++r) {
      double ss = 0.0;
      for (std::size_t j = 0; j < h; ++j) ss += x[r * h + j] * x[r * h + j];
      const double inv = 1.0 / std::sqrt(ss / static_cast<double>(h) + 1e-6);
      for (std::size_t j = 0; j < h; ++j) y[r * h + j] = x[r * h + j] * inv * g[j];
    }
    return y;
  };
  std::vector<double> x(n * h), pe(h);
  for (std::size_t r = 0; r < n; ++r) {
    sinusoidal_position(r, pe);
    for (std::size_t j = 0; j < h; ++j)
      x[r * h + j] = p.at("tok_emb").at(static_cast<std::size_t>(tokens[r]), j) + pe[j];
  }
  const auto hn = norm(x, p.at("layer0.attn_norm"));
  const auto q = mat(hn, p.at("layer0.wq"), h, h), k = mat(hn, p.at("layer0.wk"), h, h),
             v = mat(hn, p.at("layer0.wv"), h, h);
  std::vector<double> att(n * h, 0.0);
  for (std::size_t head = 0; head < c.heads; ++head)
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(i + 1);
      double mx = -1e300, z = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        double d = 0.0;
        for (std::size_t e = 0; e < hd; ++e) d += q[i * h + head * hd + e] * k[j * h + head * hd + e];
        s[j] = d / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, s[j]);
      }
      for (auto& sj : s) z += (sj = std::exp(sj - mx));
      for (std::size_t j = 0; j <= i; ++j)
        for (std::size_t e = 0; e < hd; ++e) att[i * h + head * hd + e] += s[j] / z * v[j * h + head * hd + e];
    }
  const auto o = mat(att, p.at("layer0.wo"), h, h);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += o[i];
  const auto fn = norm(x, p.at("layer0.ffn_norm"));
  auto mid = mat(fn, p.at("layer0.w1"), h, c.ffn_dim);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c.ffn_dim; ++j) {
      const double a = mid[r * c.ffn_dim + j] + p.at("layer0.b1")[j];
      mid[r * c.ffn_dim + j] = 0.5 * a * (1.0 + std::tanh(0.7978845608028654 * (a + 0.044715 * a * a * a)));
    }
  const auto out = mat(mid, p.at("layer0.w2"), c.ffn_dim, h);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < h; ++j) x[r * h + j] += out[r * h + j] + p.at("layer0.b2")[j];
  return x;
}

TEST(Encoder, EqualHeadCountsMatchPlainMultiHeadAttention) {
  EncoderConfig c = small_config();
  c.layers = 1;
  c.kv_heads = c.heads;
  const Encoder enc(c, 12);
  const Tensor s = enc.encode(kTokens, causal_mask(8));
  const std::vector<double> ref = reference_single_layer(enc, kTokens);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(s[i], ref[i], 1e-12);
}

TEST(Encoder, ConstructorValidatesParameters) {
  const EncoderConfig c = small_config();
  ParameterMap params = Encoder(c, 1).parameters();
  EXPECT_NO_THROW(Encoder(c, params));
  params.at("final_norm") = Tensor(Shape{3});
  EXPECT_THROW(Encoder(c, params), CheckpointError);
  params.erase("final_norm");
  EXPECT_THROW(Encoder(c, params), CheckpointError);
}

TEST(Encoder, SameSeedSameWeights) {
  const Encoder a(small_config(), 99), b(small_config(), 99), d(small_config(), 100);
  EXPECT_EQ(a.parameters().at("layer1.wq").values(), b.parameters().at("layer1.wq").values());
  EXPECT_NE(a.parameters().at("layer1.wq").values(), d.parameters().at("layer1.wq").values());
}

TEST(Pool, MeanAndLastToken) {
  const Tensor two = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const SentenceEmbedding m = pool(two, PoolingMode::kMean);
  EXPECT_NEAR(m.vector[0], std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(m.vector[1], std::sqrt(0.5), 1e-15);
  const SentenceEmbedding l = pool(two, PoolingMode::kLastToken);
  EXPECT_EQ(l.vector, (std::vector<double>{0.0, 1.0}));
  const Tensor same = Tensor::matrix(3, 2, {3, 4, 3, 4, 3, 4});
  for (PoolingMode mode : {PoolingMode::kMean, PoolingMode::kLastToken}) {
    const SentenceEmbedding e = pool(same, mode);
    EXPECT_NEAR(e.vector[0], 0.6, 1e-15);
    EXPECT_NEAR(e.vector[1], 0.8, 1e-15);
  }
  EXPECT_THROW(pool(Tensor::matrix(2, 2, {1, 1, -1, -1}), PoolingMode::kMean), DomainError);
}

TEST(MrlTruncate, ExamplesAndErrors) {
  const std::vector<std::size_t> dims = {2, 4};
  const SentenceEmbedding e{{0.6, 0.8, 0.0, 0.0}, 4, "en"};
  EXPECT_EQ(mrl_truncate(e, 4, dims).vector, e.vector);
  const SentenceEmbedding t = mrl_truncate(e, 2, dims);
  EXPECT_NEAR(t.vector[0], 0.6, 1e-15);
  EXPECT_NEAR(t.vector[1], 0.8, 1e-15);
  EXPECT_EQ(t.dim_used, 2u);
  EXPECT_EQ(t.language, "en");
  EXPECT_THROW(mrl_truncate(e, 3, dims), ConfigError);
}

TEST(MrlTruncate, NestingIdempotenceAndUnitNorm) {
  const EncoderConfig c = small_config();
  const Encoder enc(c, 21);
  const SentenceEmbedding e = pool(enc.encode(kTokens, bidirectional_mask(8)), PoolingMode::kMean);
  for (std::size_t d1 : c.mrl_dims)
    for (std::size_t d2 : c.mrl_dims) {
      if (d1 > d2) continue;
      const SentenceEmbedding direct = mrl_truncate(e, d1, c.mrl_dims);
      const SentenceEmbedding nested = mrl_truncate(mrl_truncate(e, d2, c.mrl_dims), d1, c.mrl_dims);
      double ss = 0.0;
      for (std::size_t i = 0; i < d1; ++i) {
        EXPECT_NEAR(direct.vector[i], nested.vector[i], 1e-15);
        ss += direct.vector[i] * direct.vector[i];
      }
      EXPECT_NEAR(ss, 1.0, 1e-10);
      EXPECT_EQ(mrl_truncate(direct, d1, c.mrl_dims).vector, direct.vector);
    }
}

TEST(Encoder, GradientsMatchFiniteDifferences) {
  for (const auto& s : run_grad_checks(17, 3)) {
    EXPECT_TRUE(s.passed()) << s.name << " error " << s.max_error << " tolerance " << s.tolerance;
  }
}

}  // namespace
}  // namespace softembed
