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

#include "softembed/dhnm.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace softembed {

using nlohmann::json;

std::string_view to_string(Decision d) { return d == Decision::kKeep ? "keep" : "replace"; }

std::string_view to_string(DhnmMode m) { return m == DhnmMode::kLiteral ? "literal" : "absolute"; }

DhnmMode parse_dhnm_mode(std::string_view name) {
  if (name == "literal") return DhnmMode::kLiteral;
  if (name == "absolute") return DhnmMode::kAbsolute;
  throw std::invalid_argument("unknown mining mode '" + std::string(name) + "'");
}

Decision decide(const NegativeSlotState& slot, bool is_initial, DhnmMode mode) {
  const double s0 = slot.s0.value_or(slot.s_cur);
  const double s = slot.s_cur;
  const double s0_mag = mode == DhnmMode::kAbsolute ? std::abs(s0) : s0;
  const double s_mag = mode == DhnmMode::kAbsolute ? std::abs(s) : s;
  if (is_initial && s0_mag < kInitialScoreFloor) return Decision::kReplace;
  if (kDecayRatio * s < s0 && s_mag < kEasyScoreCeiling) return Decision::kReplace;
  return Decision::kKeep;
}

std::optional<std::size_t> NegativePool::take() {
  if (cursor >= candidates.size()) return std::nullopt;
  return candidates[cursor++];
}

std::vector<MiningRecord> cache_scores(std::span<NegativeSlotState> slots,
                                       std::span<const double> scores, long step, DhnmMode mode) {
  if (slots.size() != scores.size()) {
    throw std::invalid_argument("cache_scores: " + std::to_string(scores.size()) + " scores for " +
                                std::to_string(slots.size()) + " slots");
  }
  for (const auto& s : slots) {
    if (s.last_cached_step == step) {
      throw std::logic_error("cache_scores: slot " + std::to_string(s.slot_index) + " of query " +
                             std::to_string(s.query_id) + " already cached at step " +
                             std::to_string(step));
    }
  }
  std::vector<MiningRecord> out;
  out.reserve(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    auto& s = slots[i];
    if (!s.s0) {
      s.s0 = scores[i];
      s.first_step_seen = step;
    }
    s.s_cur = scores[i];
    s.last_cached_step = step;
    const Decision d = decide(s, s.first_step_seen == step, mode);
    if (d == Decision::kReplace) s.flagged = true;
    out.push_back({step, s.query_id, s.slot_index, s.negative_id, *s.s0, s.s_cur, d});
  }
  return out;
}

ReplacementReport replace_flagged(NegativePool& pool, std::span<NegativeSlotState> slots) {
  ReplacementReport report;
  for (auto& s : slots) {
    if (!s.flagged) continue;
    s.flagged = false;
    if (auto next = pool.take()) {
      report.replaced.push_back({s.query_id, s.slot_index, s.negative_id, *next});
      s.negative_id = *next;
      s.s0.reset();
      s.first_step_seen = -1;
    } else {
      ++pool.exhausted_events;
      ++report.exhausted;
    }
  }
  return report;
}

NegativeMiner::NegativeMiner(DhnmMode mode, std::size_t negatives_per_query)
    : mode_(mode), k_(negatives_per_query) {}

void NegativeMiner::add_query(std::size_t query_id, std::span<const std::size_t> initial,
                              std::vector<std::size_t> pool) {
  if (initial.size() != k_) {
    throw std::invalid_argument("add_query: expected " + std::to_string(k_) + " initial negatives");
  }
  Entry e;
  for (std::size_t i = 0; i < initial.size(); ++i) {
    NegativeSlotState s;
    s.query_id = query_id;
    s.slot_index = i;
    s.negative_id = initial[i];
    e.slots.push_back(s);
  }
  e.pool.candidates = std::move(pool);
  entries_[query_id] = std::move(e);
}

NegativeMiner::Entry& NegativeMiner::entry(std::size_t query_id) {
  auto it = entries_.find(query_id);
  if (it == entries_.end()) throw std::out_of_range("unknown mining query " + std::to_string(query_id));
  return it->second;
}

const NegativeMiner::Entry& NegativeMiner::entry(std::size_t query_id) const {
  auto it = entries_.find(query_id);
  if (it == entries_.end()) throw std::out_of_range("unknown mining query " + std::to_string(query_id));
  return it->second;
}

std::vector<std::size_t> NegativeMiner::negatives(std::size_t query_id) const {
  std::vector<std::size_t> out;
  for (const auto& s : entry(query_id).slots) out.push_back(s.negative_id);
  return out;
}

std::span<const NegativeSlotState> NegativeMiner::slots(std::size_t query_id) const {
  return entry(query_id).slots;
}

const NegativePool& NegativeMiner::pool(std::size_t query_id) const { return entry(query_id).pool; }

std::vector<MiningRecord> NegativeMiner::cache(std::size_t query_id, std::span<const double> scores,
                                               long step) {
  return cache_scores(entry(query_id).slots, scores, step, mode_);
}

ReplacementReport NegativeMiner::replace_all() {
  ReplacementReport total;
  for (auto& [id, e] : entries_) {
    auto r = replace_flagged(e.pool, e.slots);
    total.replaced.insert(total.replaced.end(), r.replaced.begin(), r.replaced.end());
    total.exhausted += r.exhausted;
  }
  return total;
}

std::size_t NegativeMiner::total_exhausted() const {
  std::size_t n = 0;
  for (const auto& [id, e] : entries_) n += e.pool.exhausted_events;
  return n;
}

std::string NegativeMiner::to_json() const {
  json j;
  j["mode"] = std::string(to_string(mode_));
  j["k"] = k_;
  json qs = json::array();
  for (const auto& [id, e] : entries_) {
    json q;
    q["query"] = id;
    q["pool"] = e.pool.candidates;
    q["cursor"] = e.pool.cursor;
    q["exhausted"] = e.pool.exhausted_events;
    json slots = json::array();
    for (const auto& s : e.slots) {
      slots.push_back({{"neg", s.negative_id},
                       {"s0", s.s0 ? json(*s.s0) : json(nullptr)},
                       {"s", s.s_cur},
                       {"flagged", s.flagged},
                       {"first", s.first_step_seen},
                       {"last", s.last_cached_step}});
    }
    q["slots"] = std::move(slots);
    qs.push_back(std::move(q));
  }
  j["queries"] = std::move(qs);
  return j.dump();
}

NegativeMiner NegativeMiner::from_json(const std::string& text) {
  const json j = json::parse(text);
  NegativeMiner m(parse_dhnm_mode(j.at("mode").get<std::string>()), j.at("k").get<std::size_t>());
  for (const auto& q : j.at("queries")) {
    Entry e;
    const auto id = q.at("query").get<std::size_t>();
    e.pool.candidates = q.at("pool").get<std::vector<std::size_t>>();
    e.pool.cursor = q.at("cursor").get<std::size_t>();
    e.pool.exhausted_events = q.at("exhausted").get<std::size_t>();
    std::size_t idx = 0;
    for (const auto& s : q.at("slots")) {
      NegativeSlotState st;
      st.query_id = id;
      st.slot_index = idx++;
      st.negative_id = s.at("neg").get<std::size_t>();
      if (!s.at("s0").is_null()) st.s0 = s.at("s0").get<double>();
      st.s_cur = s.at("s").get<double>();
      st.flagged = s.at("flagged").get<bool>();
      st.first_step_seen = s.at("first").get<long>();
      st.last_cached_step = s.at("last").get<long>();
      e.slots.push_back(st);
    }
    m.entries_[id] = std::move(e);
  }
  return m;
}

void write_mining_log(std::ostream& os, std::span<const MiningRecord> records) {
  for (const auto& r : records) {
    json j{{"step", r.step},       {"query_id", r.query_id}, {"slot", r.slot},
           {"negative_id", r.negative_id}, {"s0", r.s0}, {"s_cur", r.s_cur},
           {"decision", std::string(to_string(r.decision))}};
    os << j.dump() << '\n';
  }
}

}  // namespace softembed
