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
#include <stdexcept>
#include <vector>

#include "softembed/errors.hpp"
#include "softembed/grad_check.hpp"
#include "softembed/losses.hpp"
#include "softembed/ops.hpp"
#include "softembed/rng.hpp"

namespace softembed {
namespace {

Tensor random_unit_rows(std::size_t r, std::size_t c, Rng& rng) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.normal();
  return l2_normalize_rows(Tensor::matrix(r, c, std::move(v)));
}

double dot_rows(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t e = 0; e < a.cols(); ++e) s += a.at(i, e) * b.at(j, e);
  return s;
}

// Direct loop evaluation of the contrastive objective.
double reference_info_nce(const ContrastiveBatch& b) {
  const std::size_t n = b.queries.rows(), k = b.negatives_per_query;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s;
    for (std::size_t j = 0; j < n; ++j) s.push_back(dot_rows(b.queries, i, b.positives, j) / b.temperature);
    for (std::size_t m = 0; m < k; ++m) s.push_back(dot_rows(b.queries, i, b.negatives, i * k + m) / b.temperature);
    double z = 0.0;
    for (double x : s) z += std::exp(x);
    loss -= s[i] - std::log(z);
  }
  return loss;
}

double reference_cosent(const std::vector<double>& cos, const std::vector<double>& labels, double tau) {
  double z = 0.0;
  bool any = false;
  for (std::size_t a = 0; a < cos.size(); ++a)
    for (std::size_t b = 0; b < cos.size(); ++b)
      if (labels[a] > labels[b]) {
        z += std::exp((cos[b] - cos[a]) / tau);
        any = true;
      }
  return any ? std::log1p(z) : 0.0;
}

TEST(InfoNce, HandEvaluatedSingleQuery) {
  ContrastiveBatch b;
  b.queries = Tensor::matrix(1, 2, {1, 0});
  b.positives = Tensor::matrix(1, 2, {1, 0});
  b.negatives = Tensor::matrix(1, 2, {-1, 0});
  b.negatives_per_query = 1;
  b.temperature = 1.0;
  const InfoNceResult r = info_nce(b);
  EXPECT_NEAR(r.loss.item(), std::log(1.0 + std::exp(-2.0)), 1e-15);
  EXPECT_NEAR(r.loss.item(), 0.126928, 1e-6);
  EXPECT_EQ(r.positive_scores, (std::vector<double>{1.0}));
  EXPECT_EQ(r.negative_scores, (std::vector<double>{-1.0}));
}

TEST(InfoNce, SingleQueryWithoutNegativesIsZero) {
  ContrastiveBatch b;
  b.queries = Tensor::matrix(1, 2, {0.6, 0.8});
  b.positives = Tensor::matrix(1, 2, {1, 0});
  b.temperature = 0.05;
  EXPECT_EQ(info_nce(b).loss.item(), 0.0);
}

TEST(InfoNce, EqualScoresGiveLogCandidateCount) {
  for (std::size_t m : {2u, 5u, 17u}) {
    const Tensor scores = Tensor::matrix(3, m, std::vector<double>(3 * m, 0.3));
    const std::size_t pos[] = {0, 1, m - 1};
    EXPECT_NEAR(info_nce_from_scores(scores, pos, 0.05).item(), 3.0 * std::log(static_cast<double>(m)), 1e-12);
  }
}

TEST(InfoNce, MatchesLoopReferenceOnRandomBatches) {
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(5), k = rng.below(4), d = 3 + rng.below(6);
    ContrastiveBatch b;
    b.queries = random_unit_rows(n, d, rng);
    b.positives = random_unit_rows(n, d, rng);
    if (k > 0) b.negatives = random_unit_rows(n * k, d, rng);
    b.negatives_per_query = k;
    b.temperature = trial % 2 ? 1.0 : 0.05;
    const double got = info_nce(b).loss.item();
    EXPECT_NEAR(got, reference_info_nce(b), 1e-10 * std::max(1.0, std::abs(got)));
    EXPECT_GE(got, 0.0);
  }
}

TEST(InfoNce, ShiftInvariantAndDecreasingInPositiveScore) {
  Rng rng(8);
  std::vector<double> v(4 * 6);
  for (auto& x : v) x = rng.uniform() * 2.0 - 1.0;
  const std::size_t pos[] = {0, 1, 2, 3};
  const double base = info_nce_from_scores(Tensor::matrix(4, 6, v), pos, 0.1).item();
  std::vector<double> shifted = v;
  for (auto& x : shifted) x += 0.37;
  EXPECT_NEAR(info_nce_from_scores(Tensor::matrix(4, 6, shifted), pos, 0.1).item(), base, 1e-12);
  double prev = base;
  for (int step = 1; step <= 10; ++step) {
    v[2 * 6 + 2] += 0.05;
    const double cur = info_nce_from_scores(Tensor::matrix(4, 6, v), pos, 0.1).item();
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(InfoNce, RejectsBadInput) {
  ContrastiveBatch b;
  b.queries = Tensor::matrix(1, 2, {1, 1});
  b.positives = Tensor::matrix(1, 2, {1, 0});
  EXPECT_THROW(info_nce(b), DomainError);
  b.queries = Tensor::matrix(1, 2, {1, 0});
  b.temperature = 0.0;
  EXPECT_THROW(info_nce(b), std::invalid_argument);
  b.temperature = 1.0;
  b.positives = Tensor::matrix(2, 2, {1, 0, 0, 1});
  EXPECT_THROW(info_nce(b), ShapeError);
}

TEST(Cosent, HandEvaluatedCases) {
  auto loss = [](std::vector<double> cos, std::vector<double> labels, double tau) {
    return cosent({Tensor::vector(std::move(cos)), std::move(labels), tau}).item();
  };
  EXPECT_EQ(loss({0.1, 0.7, -0.2}, {2, 2, 2}, 0.05), 0.0);
  EXPECT_NEAR(loss({0.5, 0.5}, {1, 0}, 0.05), std::log(2.0), 1e-15);
  EXPECT_NEAR(loss({0.5, 0.5}, {1, 0}, 3.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(loss({0.9, 0.8}, {1, 0}, 0.05), std::log(1.0 + std::exp(-2.0)), 1e-12);
  EXPECT_EQ(loss({0.4}, {3}, 0.05), 0.0);
  EXPECT_THROW(loss({0.5, 0.5}, {1, 0}, 0.0), std::invalid_argument);
  EXPECT_THROW(loss({0.5, 0.5}, {1}, 0.05), ShapeError);
}

TEST(Cosent, MatchesPairLoopAndIgnoresLabelScale) {
  Rng rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t p = 1 + rng.below(9);
    std::vector<double> cos(p), labels(p), relabeled(p);
    for (std::size_t i = 0; i < p; ++i) {
      cos[i] = rng.uniform() * 2.0 - 1.0;
      labels[i] = static_cast<double>(rng.below(4));
      relabeled[i] = std::exp(labels[i]) * 10.0 - 3.0;  // strictly increasing map
    }
    const double got = cosent({Tensor::vector(cos), labels, 0.05}).item();
    EXPECT_NEAR(got, reference_cosent(cos, labels, 0.05), 1e-10 * std::max(1.0, got));
    EXPECT_EQ(cosent({Tensor::vector(cos), relabeled, 0.05}).item(), got);
    EXPECT_GE(got, 0.0);
  }
}

TEST(NextTokenCe, UniformAndConfidentLogits) {
  const std::vector<int> targets = {3, 100, 511};
  const Tensor uniform = Tensor::full({3, 512}, 0.25);
  EXPECT_NEAR(next_token_ce(uniform, targets).item(), std::log(512.0), 1e-12);
  double prev = 1e9;
  for (double margin : {1.0, 5.0, 20.0, 60.0}) {
    std::vector<double> v(3 * 512, 0.0);
    for (std::size_t r = 0; r < 3; ++r) v[r * 512 + static_cast<std::size_t>(targets[r])] = margin;
    const double l = next_token_ce(Tensor::matrix(3, 512, v), targets).item();
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_LT(prev, 1e-20);
  const std::vector<int> bad = {3, 512, 0};
  EXPECT_THROW(next_token_ce(uniform, bad), std::out_of_range);
}

TEST(LossGradients, FiftySeededBatchesWithinTolerance) {
  double worst_nce = 0.0, worst_cosent = 0.0, worst_ce = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng = Rng::derive({seed, 0x10554});
    const std::size_t n = 2 + rng.below(3), k = rng.below(3), d = 4;
    auto raw = [&](std::size_t r) {
      std::vector<double> v(r * d);
      for (auto& x : v) x = rng.normal();
      return Tensor::matrix(r, d, std::move(v));
    };
    const Tensor q = raw(n), p = raw(n), neg = raw(std::max<std::size_t>(1, n * k));
    const Tensor xs[] = {q, p, neg};
    worst_nce = std::max(worst_nce, grad_check(
        [&](std::span<const Tensor> in) {
          ContrastiveBatch b;
          b.queries = l2_normalize_rows(in[0]);
          b.positives = l2_normalize_rows(in[1]);
          if (k > 0) b.negatives = l2_normalize_rows(in[2]);
          b.negatives_per_query = k;
          b.temperature = 0.2;
          return info_nce(b).loss;
        },
        std::span<const Tensor>(xs, k > 0 ? 3 : 2)));

    const Tensor a = raw(5), b2 = raw(5);
    std::vector<double> labels(5);
    for (auto& l : labels) l = static_cast<double>(rng.below(3));
    worst_cosent = std::max(worst_cosent, grad_check(
        [&](const Tensor& x) {
          return cosent({row_dots(l2_normalize_rows(x), l2_normalize_rows(b2), 1), labels, 0.5});
        },
        a));

    std::vector<int> targets(4);
    for (auto& t : targets) t = static_cast<int>(rng.below(8));
    std::vector<double> lv(32);
    for (auto& x : lv) x = rng.normal();
    worst_ce = std::max(worst_ce, grad_check([&](const Tensor& x) { return next_token_ce(x, targets); },
                                             Tensor::matrix(4, 8, lv)));
  }
  EXPECT_LT(worst_nce, 1e-4);
  EXPECT_LT(worst_cosent, 1e-4);
  EXPECT_LT(worst_ce, 1e-6);
}

}  // namespace
}  // namespace softembed
