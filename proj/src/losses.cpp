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

#include "softembed/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "softembed/errors.hpp"
#include "softembed/ops.hpp"

namespace softembed {
namespace {

void require_normalized(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + " must be a matrix, got " + shape_string(t.shape()));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double ss = 0.0;
    for (double x : t.row(r)) ss += x * x;
    if (std::abs(std::sqrt(ss) - 1.0) > 1e-8) {
      throw DomainError(std::string(what) + " row " + std::to_string(r) + " is not L2-normalized");
    }
  }
}

}  // namespace

Tensor info_nce_from_scores(const Tensor& scores, std::span<const std::size_t> positive_column,
                            double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("info_nce: temperature must be positive");
  const Tensor logp = log_softmax_rows(scale(scores, 1.0 / temperature));
  return scale(sum(pick(logp, positive_column)), -1.0);
}

InfoNceResult info_nce(const ContrastiveBatch& batch) {
  require_normalized(batch.queries, "info_nce: query");
  require_normalized(batch.positives, "info_nce: positive");
  const std::size_t b = batch.queries.rows();
  if (batch.positives.shape() != batch.queries.shape()) {
    throw ShapeError("info_nce: queries " + shape_string(batch.queries.shape()) + " vs positives " +
                     shape_string(batch.positives.shape()));
  }
  const std::size_t k = batch.negatives_per_query;

  // In-batch block: column j is positive j; row i's target is column i.
  Tensor scores = matmul_nt(batch.queries, batch.positives);
  InfoNceResult result;
  result.positive_scores.resize(b);
  for (std::size_t i = 0; i < b; ++i) result.positive_scores[i] = scores.at(i, i);
  if (k > 0) {
    require_normalized(batch.negatives, "info_nce: negative");
    Tensor neg = row_dots(batch.queries, batch.negatives, k);
    result.negative_scores = neg.values();
    scores = concat_cols(scores, neg);
  }
  std::vector<std::size_t> target(b);
  for (std::size_t i = 0; i < b; ++i) target[i] = i;
  result.loss = info_nce_from_scores(scores, target, batch.temperature);
  return result;
}

Tensor cosent(const StsBatch& batch) {
  if (!(batch.tau > 0.0)) throw std::invalid_argument("cosent: tau must be positive");
  const std::size_t p = batch.cosines.numel();
  if (p == 0 || batch.labels.size() != p) {
    throw ShapeError("cosent: " + std::to_string(batch.labels.size()) + " labels for " +
                     std::to_string(p) + " cosines");
  }
  std::vector<std::size_t> hi, lo;
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t c = 0; c < p; ++c)
      if (batch.labels[a] > batch.labels[c]) {
        hi.push_back(a);
        lo.push_back(c);
      }
  if (hi.empty()) return add_scalar(scale(sum(batch.cosines), 0.0), 0.0);
  const Tensor diffs = scale(sub(gather(batch.cosines, lo), gather(batch.cosines, hi)), 1.0 / batch.tau);
  const Tensor parts[] = {Tensor::scalar(0.0), diffs};
  return logsumexp(concat(parts));
}

Tensor next_token_ce(const Tensor& logits, std::span<const int> targets) {
  if (logits.rank() != 2 || logits.rows() != targets.size()) {
    throw ShapeError("next_token_ce: logits " + shape_string(logits.shape()) + " for " +
                     std::to_string(targets.size()) + " targets");
  }
  std::vector<std::size_t> cols(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= logits.cols()) {
      throw std::out_of_range("next_token_ce: target id " + std::to_string(targets[i]) +
                              " outside vocabulary of " + std::to_string(logits.cols()));
    }
    cols[i] = static_cast<std::size_t>(targets[i]);
  }
  return scale(mean(pick(log_softmax_rows(logits), cols)), -1.0);
}

}  // namespace softembed
