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

#include "softembed/mask_schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "softembed/errors.hpp"
#include "softembed/linalg.hpp"

namespace softembed {

std::string_view to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::kLinear: return "linear";
    case ScheduleKind::kAccelerating: return "accelerating";
    case ScheduleKind::kDecelerating: return "decelerating";
  }
  return "?";
}

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "linear") return ScheduleKind::kLinear;
  if (name == "accelerating" || name == "quadratic-accelerating") return ScheduleKind::kAccelerating;
  if (name == "decelerating" || name == "quadratic-decelerating") return ScheduleKind::kDecelerating;
  throw std::invalid_argument("unknown schedule kind '" + std::string(name) + "'");
}

std::string_view to_string(MaskKind kind) {
  switch (kind) {
    case MaskKind::kCausal: return "causal";
    case MaskKind::kBidirectional: return "bidirectional";
    case MaskKind::kSoft: return "soft";
  }
  return "?";
}

double schedule_alpha(const ScheduleState& state) {
  if (state.tau_steps <= 0) throw std::invalid_argument("schedule_alpha: tau_steps must be positive");
  if (state.t < 0) throw std::invalid_argument("schedule_alpha: t must be non-negative");
  const double x = std::min(1.0, static_cast<double>(state.t) / static_cast<double>(state.tau_steps));
  double a = 0.0;
  switch (state.kind) {
    case ScheduleKind::kLinear: a = x; break;
    case ScheduleKind::kAccelerating: a = x * x; break;
    case ScheduleKind::kDecelerating: a = 1.0 - (1.0 - x) * (1.0 - x); break;
  }
  return std::clamp(a, 0.0, 1.0);
}

AttentionMask causal_mask(std::size_t n) {
  if (n == 0) throw std::invalid_argument("causal_mask: n must be positive");
  AttentionMask m{n, n, std::vector<double>(n * n, 0.0), MaskKind::kCausal, std::nullopt};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) m.entries[i * n + j] = 1.0;
  return m;
}

AttentionMask bidirectional_mask(std::size_t n) {
  if (n == 0) throw std::invalid_argument("bidirectional_mask: n must be positive");
  return AttentionMask{n, n, std::vector<double>(n * n, 1.0), MaskKind::kBidirectional, std::nullopt};
}

AttentionMask build_soft_mask(const ScheduleState& state, std::size_t n, std::size_t l) {
  if (n == 0 || l == 0) throw std::invalid_argument("build_soft_mask: n and l must be positive");
  const double alpha = schedule_alpha(state);
  AttentionMask m{n, l, std::vector<double>(n * n, 1.0), MaskKind::kSoft, state};
  for (std::size_t i = 1; i <= n; ++i) {
    const double w = std::min(alpha * static_cast<double>(l) / static_cast<double>(i), 1.0);
    for (std::size_t j = i + 1; j <= n; ++j) m.entries[(i - 1) * n + (j - 1)] = w;
  }
  return m;
}

int mask_numerical_rank(const AttentionMask& mask, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("mask_numerical_rank: eps must be positive");
  for (double x : mask.entries) {
    if (!std::isfinite(x)) throw DomainError("mask_numerical_rank: non-finite mask entry");
  }
  const auto svd = linalg::jacobi_svd(mask.entries, mask.n, mask.n);
  if (svd.values.empty() || svd.values[0] == 0.0) return 0;
  const double cut = eps * svd.values[0];
  return static_cast<int>(std::count_if(svd.values.begin(), svd.values.end(),
                                        [cut](double s) { return s > cut; }));
}

std::vector<int> rank_trajectory(ScheduleKind kind, std::size_t n, std::size_t l,
                                 std::size_t samples, double eps) {
  if (samples < 2) throw std::invalid_argument("rank_trajectory: need at least two samples");
  const long tau = static_cast<long>(samples - 1);
  std::vector<int> ranks;
  for (long t = 0; t <= tau; ++t) {
    ranks.push_back(mask_numerical_rank(build_soft_mask({kind, t, tau}, n, l), eps));
  }
  return ranks;
}

}  // namespace softembed
