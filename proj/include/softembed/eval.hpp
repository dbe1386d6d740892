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

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "softembed/encoder.hpp"

namespace softembed {

struct ScoredId {
  std::size_t id = 0;
  double score = 0.0;
};

/// Ranked candidates per query plus binary relevance judgments. Ranked lists
/// are sorted by descending score, ties by ascending id.
struct RetrievalRun {
  std::vector<std::vector<ScoredId>> ranked;
  std::vector<std::vector<std::size_t>> relevant;
};

/// Top-k corpus ids per query by exhaustive dot product over normalized
/// vectors. k is clamped to the corpus size. `relevant` is left empty.
RetrievalRun exact_search(std::span<const std::vector<double>> queries,
                          std::span<const std::vector<double>> corpus, std::size_t k);

/// Mean over judged queries of |relevant ∩ top-k| / |relevant|. Queries with
/// no judgments are skipped and reported in `warnings`.
double recall_at_k(const RetrievalRun& run, std::size_t k,
                   std::vector<std::string>* warnings = nullptr);

/// Binary-relevance nDCG over the top 10, averaged over judged queries.
double ndcg_at_10(const RetrievalRun& run, std::vector<std::string>* warnings = nullptr);

/// Pearson correlation of average ranks; nullopt when either input is
/// constant. Throws ShapeError unless both have the same length >= 2.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

/// Average (1-based) ranks with ties sharing their mean rank.
std::vector<double> average_ranks(std::span<const double> x);

struct DistributionReport {
  std::vector<std::string> languages;             ///< sorted codes
  std::vector<std::vector<double>> centroids;     ///< per language, same order
  std::vector<std::vector<double>> distances;     ///< pairwise Euclidean, symmetric
  double mean_distance = 0.0;                     ///< mean over unordered pairs
  std::vector<std::array<double, 2>> projection;  ///< PCA coordinates, input order
  std::vector<std::string> projection_labels;     ///< language per projected point
};

/// Per-language centroids of normalized embeddings and a 2-D PCA projection.
/// Throws DataError unless there are >= 2 languages with >= 2 embeddings each.
DistributionReport centroid_analysis(std::span<const SentenceEmbedding> embeddings);

/// {"metric": ..., "split": ..., "value": ...} on one line.
void write_metric(std::ostream& os, const std::string& metric, const std::string& split,
                  double value);

/// Whitespace-separated "label x y" table with a comment header naming the
/// projection method.
void write_projection(std::ostream& os, const DistributionReport& report);

}  // namespace softembed
