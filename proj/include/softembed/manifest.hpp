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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "softembed/datagen.hpp"
#include "softembed/dhnm.hpp"
#include "softembed/encoder.hpp"
#include "softembed/mask_schedule.hpp"

namespace softembed {

/// Pipeline order: a manifest lists stages in this order, each at most once.
enum class StageKind { kLmPretrain, kPairSft, kWeakContrastive, kSupervised };

std::string_view to_string(StageKind kind);
StageKind parse_stage_kind(std::string_view name);

struct MaskPolicy {
  MaskKind kind = MaskKind::kCausal;
  ScheduleKind schedule = ScheduleKind::kLinear;
};

/// One task stream of the supervised stage.
struct TaskMix {
  TaskKind task = TaskKind::kRetrieval;
  std::string data;
  double weight = 1.0;
  /// 0 means the stage batch size.
  std::size_t batch_size = 0;
};

struct DhnmSettings {
  bool enabled = false;
  DhnmMode mode = DhnmMode::kAbsolute;
  /// Candidates kept per query beyond the initial negatives.
  std::size_t pool_size = 32;
};

struct StageConfig {
  StageKind kind = StageKind::kLmPretrain;
  long steps = 0;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  /// Fraction of the step budget spent in linear warmup; negative selects
  /// the stage default (0.05 for lm-pretrain, 0.02 otherwise).
  double warmup_fraction = -1.0;
  double weight_decay = 0.001;
  /// After warmup the rate decays linearly to zero at the last step when
  /// true, and stays constant otherwise.
  bool linear_decay = true;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
  MaskPolicy mask;
  /// Dataset for stages 1-3 ("synth:<task>" or a file path).
  std::string data;
  /// Task streams for the supervised stage.
  std::vector<TaskMix> tasks;
  std::size_t negatives_per_query = 7;
  bool mrl = false;
  DhnmSettings dhnm;
  /// Per-stage seed; unset derives one from the run seed and stage index.
  std::optional<std::uint64_t> seed;
  double temperature = 0.05;
  double cosent_tau = 0.05;
  /// Scorer for the contrastive stage's quality filter: "none" or "overlap".
  std::string quality_scorer = "none";
  double quality_threshold = kDefaultQualityThreshold;
  /// Held-out retrieval set evaluated every `eval_every` steps (0 = only at
  /// the end of the stage when `eval_data` is set).
  std::string eval_data;
  long eval_every = 0;
  /// Ends the stage once held-out Recall@1 reaches this value.
  std::optional<double> early_stop_recall1;

  double effective_warmup_fraction() const;
  /// Throws ConfigError on the first violated constraint.
  void validate() const;
};

struct RunManifest {
  std::uint64_t seed = 1;
  EncoderConfig encoder;
  std::vector<StageConfig> stages;
  std::filesystem::path output_dir = "runs/default";
  /// Synthetic corpus backing "synth:<task>" data references.
  std::optional<SynthConfig> synthetic;
  /// Starting weights and tokenizer instead of a fresh model.
  std::string init_checkpoint;
  /// Directory that relative data paths are resolved against.
  std::filesystem::path base_dir = ".";

  /// Throws ConfigError if the file is unreadable or invalid.
  static RunManifest load(const std::filesystem::path& path);
  static RunManifest parse(const std::string& yaml, const std::filesystem::path& base_dir = ".");
  std::string to_yaml() const;
  void validate() const;

  std::filesystem::path resolve(const std::string& data_ref) const;
};

/// Desk-scale four-stage manifest: budgets 500/200/500/1000, batch 32,
/// retrieval batches of 4 with 7 negatives, STS batches of 32.
RunManifest toy_manifest();

}  // namespace softembed
