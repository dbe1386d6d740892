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

#include "softembed/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <set>

#include "json.hpp"
#include "softembed/errors.hpp"
#include "softembed/linalg.hpp"

namespace softembed {

namespace {

constexpr double kNormTolerance = 1e-6;

bool ranks_before(const ScoredId& a, const ScoredId& b) {
  return a.score > b.score || (a.score == b.score && a.id < b.id);
}

void check_normalized(const std::vector<double>& v, const char* what) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  if (std::abs(std::sqrt(ss) - 1.0) > kNormTolerance) {
    throw DomainError(std::string("exact_search: ") + what + " vector is not normalized");
  }
}

template <typename PerQuery>
double mean_over_judged(const RetrievalRun& run, std::vector<std::string>* warnings, PerQuery f) {
  if (run.relevant.size() != run.ranked.size()) {
    throw ShapeError("retrieval run has " + std::to_string(run.ranked.size()) + " ranked lists but " +
                     std::to_string(run.relevant.size()) + " judgment sets");
  }
  double total = 0.0;
  std::size_t judged = 0;
  for (std::size_t q = 0; q < run.ranked.size(); ++q) {
    const std::set<std::size_t> rel(run.relevant[q].begin(), run.relevant[q].end());
    if (rel.empty()) {
      if (warnings) warnings->push_back("query " + std::to_string(q) + " has no judgments; skipped");
      continue;
    }
    total += f(run.ranked[q], rel);
    ++judged;
  }
  if (judged == 0) throw DataError("no query in the run has relevance judgments");
  return total / static_cast<double>(judged);
}

}  // namespace

RetrievalRun exact_search(std::span<const std::vector<double>> queries,
                          std::span<const std::vector<double>> corpus, std::size_t k) {
  if (corpus.empty()) throw ShapeError("exact_search: empty corpus");
  const std::size_t dim = corpus.front().size();
  for (const auto& c : corpus) {
    if (c.size() != dim) throw ShapeError("exact_search: ragged corpus");
    check_normalized(c, "corpus");
  }
  k = std::min(k, corpus.size());
  RetrievalRun run;
  run.ranked.reserve(queries.size());
  std::vector<ScoredId> all(corpus.size());
  for (const auto& q : queries) {
    if (q.size() != dim) throw ShapeError("exact_search: query dimension mismatch");
    check_normalized(q, "query");
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim; ++j) s += q[j] * corpus[i][j];
      all[i] = {i, s};
    }
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), ranks_before);
    run.ranked.emplace_back(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return run;
}

double recall_at_k(const RetrievalRun& run, std::size_t k, std::vector<std::string>* warnings) {
  return mean_over_judged(run, warnings, [k](const auto& ranked, const std::set<std::size_t>& rel) {
    std::size_t hits = 0;
    for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) hits += rel.count(ranked[r].id);
    return static_cast<double>(hits) / static_cast<double>(rel.size());
  });
}

double ndcg_at_10(const RetrievalRun& run, std::vector<std::string>* warnings) {
  return mean_over_judged(run, warnings, [](const auto& ranked, const std::set<std::size_t>& rel) {
    double dcg = 0.0, ideal = 0.0;
    for (std::size_t r = 0; r < std::min<std::size_t>(10, ranked.size()); ++r)
      if (rel.count(ranked[r].id)) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    for (std::size_t r = 0; r < std::min<std::size_t>(10, rel.size()); ++r)
      ideal += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    return dcg / ideal;
  });
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ShapeError("spearman needs two inputs of equal length >= 2");
  }
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean, dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

DistributionReport centroid_analysis(std::span<const SentenceEmbedding> embeddings) {
  std::map<std::string, std::vector<std::size_t>> by_lang;
  std::size_t dim = 0;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    const auto& e = embeddings[i];
    if (!e.language) throw DataError("embedding " + std::to_string(i) + " has no language tag");
    if (i == 0) dim = e.vector.size();
    if (e.vector.size() != dim || dim == 0) throw ShapeError("centroid_analysis: ragged embeddings");
    by_lang[*e.language].push_back(i);
  }
  if (by_lang.size() < 2) throw DataError("centroid analysis needs at least two languages");
  for (const auto& [lang, idx] : by_lang)
    if (idx.size() < 2) throw DataError("language '" + lang + "' has fewer than two embeddings");

  DistributionReport rep;
  for (const auto& [lang, idx] : by_lang) {
    std::vector<double> c(dim, 0.0);
    for (auto i : idx)
      for (std::size_t j = 0; j < dim; ++j) c[j] += embeddings[i].vector[j];
    for (auto& x : c) x /= static_cast<double>(idx.size());
    rep.languages.push_back(lang);
    rep.centroids.push_back(std::move(c));
  }
  const std::size_t L = rep.languages.size();
  rep.distances.assign(L, std::vector<double>(L, 0.0));
  double total = 0.0;
  for (std::size_t a = 0; a < L; ++a) {
    for (std::size_t b = a + 1; b < L; ++b) {
      double ss = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double d = rep.centroids[a][j] - rep.centroids[b][j];
        ss += d * d;
      }
      rep.distances[a][b] = rep.distances[b][a] = std::sqrt(ss);
      total += std::sqrt(ss);
    }
  }
  rep.mean_distance = total / static_cast<double>(L * (L - 1) / 2);

  // PCA: right singular vectors of the centered data matrix.
  const std::size_t m = embeddings.size();
  std::vector<double> mean(dim, 0.0);
  for (const auto& e : embeddings)
    for (std::size_t j = 0; j < dim; ++j) mean[j] += e.vector[j];
  for (auto& x : mean) x /= static_cast<double>(m);
  std::vector<double> centered(m * dim);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < dim; ++j) centered[i * dim + j] = embeddings[i].vector[j] - mean[j];
  const auto svd = linalg::jacobi_svd(centered, m, dim);
  rep.projection.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      double s = 0.0;
      if (c < dim)
        for (std::size_t j = 0; j < dim; ++j) s += centered[i * dim + j] * svd.right[j * dim + c];
      rep.projection[i][c] = s;
    }
    rep.projection_labels.push_back(*embeddings[i].language);
  }
  return rep;
}

void write_metric(std::ostream& os, const std::string& metric, const std::string& split, double value) {
  nlohmann::json j{{"metric", metric}, {"split", split}};
  if (std::isfinite(value)) j["value"] = value;
  else j["value"] = nullptr;
  os << j.dump() << '\n';
}

void write_projection(std::ostream& os, const DistributionReport& report) {
  os << "# projection: pca (first two principal components)\n# label x y\n";
  os.precision(17);
  for (std::size_t i = 0; i < report.projection.size(); ++i) {
    os << report.projection_labels[i] << ' ' << report.projection[i][0] << ' ' << report.projection[i][1]
       << '\n';
  }
}

}  // namespace softembed
