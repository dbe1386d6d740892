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

#include "softembed/diagnostics.hpp"

#include <algorithm>

#include "softembed/encoder.hpp"
#include "softembed/grad_check.hpp"
#include "softembed/losses.hpp"
#include "softembed/ops.hpp"
#include "softembed/rng.hpp"

namespace softembed {

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double stddev = 1.0) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor::matrix(r, c, std::move(v));
}

double check_info_nce(Rng& rng) {
  const std::size_t b = 2 + rng.below(3), k = rng.below(3), d = 3 + rng.below(4);
  const Tensor q = random_matrix(b, d, rng), p = random_matrix(b, d, rng);
  const Tensor n = k ? random_matrix(b * k, d, rng) : Tensor();
  const double temp = 0.05 + rng.uniform();
  std::vector<Tensor> xs{q, p};
  if (k) xs.push_back(n);
  return grad_check(
      [&](std::span<const Tensor> in) {
        ContrastiveBatch cb{l2_normalize_rows(in[0]), l2_normalize_rows(in[1]),
                            k ? l2_normalize_rows(in[2]) : Tensor(), k, temp};
        return info_nce(cb).loss;
      },
      xs);
}

double check_cosent(Rng& rng) {
  const std::size_t p = 2 + rng.below(6);
  std::vector<double> cos(p), labels(p);
  for (auto& c : cos) c = 2.0 * rng.uniform() - 1.0;
  for (auto& l : labels) l = static_cast<double>(rng.below(4));
  const double tau = 0.05 + 0.5 * rng.uniform();
  return grad_check([&](const Tensor& x) { return cosent(StsBatch{x, labels, tau}); }, Tensor::vector(cos));
}

double check_next_token(Rng& rng) {
  const std::size_t rows = 4, vocab = 8;
  std::vector<int> targets(rows);
  for (auto& t : targets) t = static_cast<int>(rng.below(vocab));
  return grad_check([&](const Tensor& x) { return next_token_ce(x, targets); },
                    random_matrix(rows, vocab, rng, 2.0));
}

double check_encoder(Rng& rng) {
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.hidden_dim = 8;
  cfg.heads = 4;
  cfg.kv_heads = 2;
  cfg.ffn_dim = 12;
  cfg.vocab_size = 270;
  cfg.max_len = 8;
  cfg.mrl_dims = {4, 8};
  Encoder enc(cfg, rng.next());
  std::vector<std::vector<int>> seqs;
  for (int s = 0; s < 4; ++s) {
    std::vector<int> t(2 + rng.below(4));
    for (auto& id : t) id = static_cast<int>(rng.below(cfg.vocab_size));
    seqs.push_back(std::move(t));
  }
  const PackedBatch batch = PackedBatch::pack(seqs);
  const ScheduleState sched{ScheduleKind::kLinear, static_cast<long>(rng.below(5)), 4};
  std::vector<AttentionMask> masks;
  for (const auto& s : seqs) masks.push_back(build_soft_mask(sched, s.size(), s.size()));

  const auto names = Encoder::parameter_names(cfg);
  std::vector<Tensor> xs;
  for (const auto& n : names) xs.push_back(enc.parameters().at(n));
  // A spread of coordinates across every parameter tensor.
  std::vector<Coordinate> coords;
  for (std::size_t t = 0; t < xs.size(); ++t)
    for (int j = 0; j < 2; ++j) coords.push_back({t, static_cast<std::size_t>(rng.below(xs[t].numel()))});

  const std::size_t rows0[] = {0, 1}, rows1[] = {2, 3};
  return grad_check(
      [&](std::span<const Tensor> in) {
        ParameterMap params;
        for (std::size_t i = 0; i < names.size(); ++i) params.emplace(names[i], in[i]);
        const Tensor pooled = l2_normalize_rows(enc.pool_batch(enc.forward(params, batch, masks), batch));
        ContrastiveBatch cb{select_rows(pooled, rows0), select_rows(pooled, rows1), Tensor(), 0, 0.5};
        const Tensor lm = next_token_ce(enc.lm_logits(params, pooled), std::vector<int>{1, 2, 3, 4});
        return add(info_nce(cb).loss, lm);
      },
      xs, 1e-6, coords);
}

}  // namespace

std::vector<GradCheckSummary> run_grad_checks(std::uint64_t seed, std::size_t cases) {
  struct Entry {
    const char* name;
    double (*fn)(Rng&);
    double tol;
  };
  const Entry entries[] = {{"info_nce", check_info_nce, 1e-4},
                           {"cosent", check_cosent, 1e-4},
                           {"next_token_ce", check_next_token, 1e-4},
                           {"encoder", check_encoder, 1e-3}};
  std::vector<GradCheckSummary> out;
  for (std::size_t e = 0; e < std::size(entries); ++e) {
    GradCheckSummary s{entries[e].name, cases, 0.0, entries[e].tol};
    for (std::size_t c = 0; c < cases; ++c) {
      Rng rng = Rng::derive({seed, e, c});
      s.max_error = std::max(s.max_error, entries[e].fn(rng));
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace softembed
