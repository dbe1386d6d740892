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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace softembed {

/// Shape of the causal-to-bidirectional interpolation alpha(t).
enum class ScheduleKind { kLinear, kAccelerating, kDecelerating };

std::string_view to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view name);

struct ScheduleState {
  ScheduleKind kind = ScheduleKind::kLinear;
  long t = 0;
  long tau_steps = 1;
};

/// alpha(t) in [0, 1]:
///   linear        t/tau
///   accelerating  (t/tau)^2
///   decelerating  1 - (1 - t/tau)^2
/// Throws std::invalid_argument for tau_steps <= 0 or t < 0; t > tau clamps to 1.
double schedule_alpha(const ScheduleState& state);

enum class MaskKind { kCausal, kBidirectional, kSoft };

std::string_view to_string(MaskKind kind);

/// N x N multiplicative attention weights. Entry (i, j) (0-based storage)
/// scales how much query position i attends to key position j. Entries on and
/// below the diagonal are always exactly 1.
struct AttentionMask {
  std::size_t n = 0;
  std::size_t l = 0;
  std::vector<double> entries;
  MaskKind kind = MaskKind::kCausal;
  std::optional<ScheduleState> schedule;

  /// 1-based access matching the usual M_ij notation.
  double operator()(std::size_t i, std::size_t j) const { return entries[(i - 1) * n + (j - 1)]; }
  std::span<const double> weights() const { return entries; }
};

AttentionMask causal_mask(std::size_t n);
AttentionMask bidirectional_mask(std::size_t n);

/// Soft mask with rows and columns counted from 1:
///   M_ij = 1                          if i >= j
///   M_ij = min(alpha(t) * l / i, 1)   if i <  j
/// Throws std::invalid_argument for n == 0 or l == 0.
AttentionMask build_soft_mask(const ScheduleState& state, std::size_t n, std::size_t l);

/// Number of singular values strictly greater than eps * (largest singular
/// value). Throws DomainError on non-finite entries.
int mask_numerical_rank(const AttentionMask& mask, double eps = 1e-8);

/// Ranks of soft masks sampled at t = k * tau / (samples - 1), k = 0..samples-1.
std::vector<int> rank_trajectory(ScheduleKind kind, std::size_t n, std::size_t l,
                                 std::size_t samples, double eps = 1e-8);

}  // namespace softembed
