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
#include "softembed/mask_schedule.hpp"

namespace softembed {
namespace {

constexpr ScheduleKind kKinds[] = {ScheduleKind::kLinear, ScheduleKind::kAccelerating,
                                   ScheduleKind::kDecelerating};

TEST(ScheduleAlpha, ClosedForms) {
  EXPECT_EQ(schedule_alpha({ScheduleKind::kLinear, 0, 100}), 0.0);
  EXPECT_DOUBLE_EQ(schedule_alpha({ScheduleKind::kLinear, 25, 100}), 0.25);
  EXPECT_DOUBLE_EQ(schedule_alpha({ScheduleKind::kAccelerating, 50, 100}), 0.25);
  EXPECT_DOUBLE_EQ(schedule_alpha({ScheduleKind::kDecelerating, 50, 100}), 0.75);
}

TEST(ScheduleAlpha, EndpointsAndClamp) {
  for (ScheduleKind k : kKinds) {
    EXPECT_EQ(schedule_alpha({k, 0, 37}), 0.0);
    EXPECT_EQ(schedule_alpha({k, 37, 37}), 1.0);
    EXPECT_EQ(schedule_alpha({k, 80, 37}), 1.0);
  }
  EXPECT_THROW(schedule_alpha({ScheduleKind::kLinear, 0, 0}), std::invalid_argument);
  EXPECT_THROW(schedule_alpha({ScheduleKind::kLinear, -1, 10}), std::invalid_argument);
}

TEST(ScheduleAlpha, NamesRoundTrip) {
  for (ScheduleKind k : kKinds) EXPECT_EQ(parse_schedule_kind(to_string(k)), k);
  EXPECT_THROW(parse_schedule_kind("cubic"), std::invalid_argument);
}

TEST(SoftMask, StartIsCausalEndIsAllOnes) {
  for (std::size_t n : {1u, 3u, 9u}) {
    const AttentionMask start = build_soft_mask({ScheduleKind::kLinear, 0, 10}, n, n);
    EXPECT_EQ(start.entries, causal_mask(n).entries);
    const AttentionMask end = build_soft_mask({ScheduleKind::kLinear, 10, 10}, n, n);
    EXPECT_EQ(end.entries, bidirectional_mask(n).entries);
  }
  // Start is causal for any l, not only l = n.
  EXPECT_EQ(build_soft_mask({ScheduleKind::kDecelerating, 0, 5}, 6, 2).entries, causal_mask(6).entries);
}

TEST(SoftMask, HandEvaluatedEntries) {
  const AttentionMask m = build_soft_mask({ScheduleKind::kLinear, 5, 10}, 4, 4);
  EXPECT_EQ(m(1, 2), 1.0);
  EXPECT_DOUBLE_EQ(m(3, 4), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m(2, 4), 1.0);
  EXPECT_EQ(m(4, 1), 1.0);
  EXPECT_EQ(m.kind, MaskKind::kSoft);
  ASSERT_TRUE(m.schedule.has_value());
  EXPECT_EQ(m.schedule->t, 5);
}

TEST(SoftMask, EntriesInUnitIntervalAndLowerTriangleIsOne) {
  for (ScheduleKind k : kKinds) {
    for (long t = 0; t <= 12; ++t) {
      const AttentionMask m = build_soft_mask({k, t, 12}, 10, 7);
      for (std::size_t i = 1; i <= 10; ++i) {
        for (std::size_t j = 1; j <= 10; ++j) {
          ASSERT_GE(m(i, j), 0.0);
          ASSERT_LE(m(i, j), 1.0);
          if (i >= j) {
            ASSERT_EQ(m(i, j), 1.0);
          }
        }
      }
    }
  }
}

TEST(SoftMask, EachEntryIsNonDecreasingInTime) {
  const std::size_t n = 12;
  for (ScheduleKind k : kKinds) {
    AttentionMask prev = build_soft_mask({k, 0, 40}, n, n);
    for (long t = 1; t <= 40; ++t) {
      const AttentionMask cur = build_soft_mask({k, t, 40}, n, n);
      for (std::size_t e = 0; e < n * n; ++e) ASSERT_LE(prev.entries[e], cur.entries[e]) << "t=" << t;
      prev = cur;
    }
  }
}

TEST(SoftMask, EarlierRowsSaturateNoLater) {
  const std::size_t n = 16;
  const long tau = 64;
  for (ScheduleKind k : kKinds) {
    std::vector<long> first_full(n + 1, tau + 1);
    for (long t = 0; t <= tau; ++t) {
      const AttentionMask m = build_soft_mask({k, t, tau}, n, n);
      for (std::size_t i = 1; i < n; ++i)
        if (first_full[i] > tau && m(i, n) == 1.0) first_full[i] = t;
    }
    for (std::size_t i = 1; i + 1 < n; ++i) EXPECT_LE(first_full[i], first_full[i + 1]);
  }
}

TEST(MaskRank, Basics) {
  EXPECT_EQ(mask_numerical_rank(causal_mask(8)), 8);
  EXPECT_EQ(mask_numerical_rank(bidirectional_mask(8)), 1);
  AttentionMask bad = causal_mask(3);
  bad.entries[1] = std::nan("");
  EXPECT_THROW(mask_numerical_rank(bad), DomainError);
  EXPECT_THROW(mask_numerical_rank(causal_mask(3), 0.0), std::invalid_argument);
}

TEST(MaskRank, EndpointsAcrossSizes) {
  for (std::size_t n : {4u, 16u, 64u})
    for (ScheduleKind k : kKinds) {
      EXPECT_EQ(mask_numerical_rank(build_soft_mask({k, 0, 8}, n, n), 1e-8), static_cast<int>(n));
      EXPECT_EQ(mask_numerical_rank(build_soft_mask({k, 8, 8}, n, n), 1e-8), 1);
    }
}

// Golden sequences from an independent numpy SVD (tests/oracles).
TEST(MaskRank, TrajectoriesMatchReferenceSvd) {
  EXPECT_EQ(rank_trajectory(ScheduleKind::kLinear, 16, 16, 9),
            (std::vector<int>{16, 14, 12, 10, 8, 6, 4, 2, 1}));
  EXPECT_EQ(rank_trajectory(ScheduleKind::kAccelerating, 16, 16, 9),
            (std::vector<int>{16, 16, 15, 14, 12, 10, 7, 4, 1}));
  EXPECT_EQ(rank_trajectory(ScheduleKind::kDecelerating, 16, 16, 9),
            (std::vector<int>{16, 13, 9, 7, 4, 3, 1, 1, 1}));
  EXPECT_EQ(mask_numerical_rank(build_soft_mask({ScheduleKind::kLinear, 4, 8}, 16, 16)), 8);
}

TEST(MaskRank, TrajectoryNeverIncreases) {
  for (ScheduleKind k : kKinds) {
    const std::vector<int> r = rank_trajectory(k, 24, 24, 25);
    for (std::size_t i = 1; i < r.size(); ++i) EXPECT_LE(r[i], r[i - 1]);
  }
}

}  // namespace
}  // namespace softembed
