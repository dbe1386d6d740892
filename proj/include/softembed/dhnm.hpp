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
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace softembed {

enum class Decision { kKeep, kReplace };

/// kLiteral compares raw scores against the 0.4 / 0.7 thresholds; kAbsolute
/// compares their magnitudes. The 1.2 ratio test is signed in both modes.
enum class DhnmMode { kLiteral, kAbsolute };

std::string_view to_string(Decision d);
std::string_view to_string(DhnmMode m);
DhnmMode parse_dhnm_mode(std::string_view name);

inline constexpr double kInitialScoreFloor = 0.4;
inline constexpr double kDecayRatio = 1.2;
inline constexpr double kEasyScoreCeiling = 0.7;

struct NegativeSlotState {
  std::size_t query_id = 0;
  std::size_t slot_index = 0;
  std::size_t negative_id = 0;
  /// Score at the first step the current negative was seen; unset until then.
  std::optional<double> s0;
  double s_cur = 0.0;
  bool flagged = false;
  long first_step_seen = -1;
  long last_cached_step = -1;
};

/// Replacement rule for one hard negative. Pure: depends only on its
/// arguments.
///   Replace if (is_initial and S0 < 0.4) or (1.2 * S < S0 and S < 0.7)
/// with |S0|, |S| in the threshold comparisons under kAbsolute.
Decision decide(const NegativeSlotState& slot, bool is_initial, DhnmMode mode);

struct NegativePool {
  std::vector<std::size_t> candidates;
  std::size_t cursor = 0;
  std::size_t exhausted_events = 0;

  std::optional<std::size_t> take();
  std::size_t remaining() const { return candidates.size() - cursor; }
};

struct MiningRecord {
  long step = 0;
  std::size_t query_id = 0;
  std::size_t slot = 0;
  std::size_t negative_id = 0;
  double s0 = 0.0;
  double s_cur = 0.0;
  Decision decision = Decision::kKeep;
};

/// Stores this step's scores on `slots` (scores[i] belongs to slots[i]),
/// initializing S0 on first sight and flagging slots whose decision is
/// Replace. Nothing is swapped here. Throws std::logic_error when a slot is
/// cached twice in one step.
std::vector<MiningRecord> cache_scores(std::span<NegativeSlotState> slots,
                                       std::span<const double> scores, long step, DhnmMode mode);

struct Replacement {
  std::size_t query_id = 0;
  std::size_t slot = 0;
  std::size_t old_negative = 0;
  std::size_t new_negative = 0;
};

struct ReplacementReport {
  std::vector<Replacement> replaced;
  std::size_t exhausted = 0;
};

/// Swaps every flagged slot for the pool's next candidate. On exhaustion the
/// slot keeps its negative and the pool records an exhaustion event.
ReplacementReport replace_flagged(NegativePool& pool, std::span<NegativeSlotState> slots);

/// Per-query slots and pools for a training run.
class NegativeMiner {
 public:
  NegativeMiner() = default;
  NegativeMiner(DhnmMode mode, std::size_t negatives_per_query);

  /// Registers query `query_id` with its first K negatives and the ordered
  /// remainder of its candidate list.
  void add_query(std::size_t query_id, std::span<const std::size_t> initial,
                 std::vector<std::size_t> pool);

  bool has_query(std::size_t query_id) const { return entries_.count(query_id) != 0; }
  std::vector<std::size_t> negatives(std::size_t query_id) const;
  std::span<const NegativeSlotState> slots(std::size_t query_id) const;
  const NegativePool& pool(std::size_t query_id) const;

  std::vector<MiningRecord> cache(std::size_t query_id, std::span<const double> scores, long step);
  /// Step-boundary swap across all queries, in ascending query order.
  ReplacementReport replace_all();

  DhnmMode mode() const noexcept { return mode_; }
  std::size_t negatives_per_query() const noexcept { return k_; }
  std::size_t total_exhausted() const;

  std::string to_json() const;
  static NegativeMiner from_json(const std::string& text);

 private:
  struct Entry {
    std::vector<NegativeSlotState> slots;
    NegativePool pool;
  };
  Entry& entry(std::size_t query_id);
  const Entry& entry(std::size_t query_id) const;

  DhnmMode mode_ = DhnmMode::kAbsolute;
  std::size_t k_ = 0;
  std::map<std::size_t, Entry> entries_;
};

/// One JSON object per line: step, query_id, slot, negative_id, s0, s_cur, decision.
void write_mining_log(std::ostream& os, std::span<const MiningRecord> records);

}  // namespace softembed
