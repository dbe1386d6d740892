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
#include <span>
#include <vector>

#include "softembed/tensor.hpp"

namespace softembed {

/// Queries x_i and positives y_i+ are [B x d]; explicit hard negatives are
/// [B*K x d] with row i*K + k belonging to query i (empty tensor when K = 0).
/// All rows must be L2-normalized.
struct ContrastiveBatch {
  Tensor queries;
  Tensor positives;
  Tensor negatives;
  std::size_t negatives_per_query = 0;
  double temperature = 0.05;
};

struct InfoNceResult {
  Tensor loss;
  /// cos(x_i, y_i+), length B.
  std::vector<double> positive_scores;
  /// cos(x_i, n_ik), length B*K, row-major. These are the exact values the
  /// loss consumed, available to the negative miner without recomputation.
  std::vector<double> negative_scores;
};

/// InfoNCE with in-batch negatives, summed over queries:
///   -sum_i log( exp(c(x_i, y_i+)/T) / sum_{y in C_i} exp(c(x_i, y)/T) )
/// where C_i holds every in-batch positive plus query i's own explicit
/// negatives. The denominator includes the positive.
InfoNceResult info_nce(const ContrastiveBatch& batch);

/// Same objective on a precomputed [B x M] score matrix: row i's target
/// column is positive_column[i].
Tensor info_nce_from_scores(const Tensor& scores, std::span<const std::size_t> positive_column,
                            double temperature);

/// Pair cosines <x_a, x_b> for P sentence pairs with ground-truth labels.
struct StsBatch {
  Tensor cosines;
  std::vector<double> labels;
  double tau = 0.05;
};

/// CoSENT: log(1 + sum over (a, b) with label_a > label_b of
/// exp((cos_b - cos_a) / tau)). Exactly 0 when no ordered pair exists.
Tensor cosent(const StsBatch& batch);

/// Mean next-token cross-entropy of [L x V] logits against L target ids.
Tensor next_token_ce(const Tensor& logits, std::span<const int> targets);

}  // namespace softembed
