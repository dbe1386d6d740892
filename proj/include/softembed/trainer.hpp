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
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "softembed/datagen.hpp"
#include "softembed/dhnm.hpp"
#include "softembed/encoder.hpp"
#include "softembed/manifest.hpp"
#include "softembed/optimizer.hpp"
#include "softembed/tokenizer.hpp"

namespace softembed {

struct Model {
  Encoder encoder;
  Tokenizer tokenizer;
};

/// Fresh model with a tokenizer built from `texts`.
Model make_model(const EncoderConfig& config, const std::vector<std::string>& texts, std::uint64_t seed);

/// Every string in a dataset (texts, record fields, example fields).
std::vector<std::string> dataset_strings(const Dataset& ds);

/// Datasets a stage reads, already loaded.
struct StageInputs {
  const Dataset* data = nullptr;
  /// Parallel to StageConfig::tasks.
  std::vector<const Dataset*> tasks;
  const Dataset* eval = nullptr;
};

/// Resumable state of a stage in progress.
struct StageProgress {
  long next_step = 0;
  AdamW optimizer;
  /// Miner per supervised task, keyed "task<i>". Built at the first step when
  /// `miners_ready` is false.
  std::map<std::string, NegativeMiner> miners;
  bool miners_ready = false;
};

struct StageHooks {
  std::size_t stage_index = 0;
  std::uint64_t run_seed = 1;
  /// One JSON record per step (and per evaluation).
  std::ostream* metrics = nullptr;
  std::ostream* mining_log = nullptr;
  /// Human-readable progress.
  std::ostream* log = nullptr;
  /// Return before executing this stage step, leaving `progress` resumable.
  std::optional<long> stop_at_step;
};

struct StageResult {
  StageKind kind = StageKind::kLmPretrain;
  long steps_run = 0;
  /// Weighted loss of the last executed step.
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> recall_at_1;
  bool early_stopped = false;
  bool interrupted = false;
  std::size_t pairs_filtered = 0;
  std::size_t replacements = 0;
  std::size_t exhausted = 0;
};

/// Runs steps progress.next_step .. cfg.steps-1 of one stage.
///   lm-pretrain / pair-sft: next-token cross-entropy under the causal mask
///   weak-contrastive: InfoNCE with in-batch negatives under the soft mask,
///     schedule clock t = step, tau = steps - 1
///   supervised: round-robin over tasks (InfoNCE with explicit or mined
///     negatives, CoSENT for STS) under the bidirectional mask
/// Throws DataError when the data does not fit the stage and NumericalError
/// with the step index on a non-finite loss or gradient.
StageResult run_stage(const StageConfig& cfg, Model& model, const StageInputs& inputs, StageProgress& progress,
                      const StageHooks& hooks);

/// Normalized sentence embeddings, optionally truncated to an MRL prefix.
std::vector<std::vector<double>> embed_texts(const Model& model, const std::vector<std::string>& texts,
                                             MaskKind mask = MaskKind::kBidirectional, std::size_t dim = 0);

struct RetrievalScores {
  double recall_at_1 = 0.0;
  double recall_at_10 = 0.0;
  double ndcg_at_10 = 0.0;
  std::size_t queries = 0;
  std::size_t corpus = 0;
};

/// Queries against the set of distinct positives of `ds`; each query's own
/// positive is its single relevant passage.
RetrievalScores evaluate_retrieval(const Model& model, const Dataset& ds, std::size_t dim = 0);

/// Spearman correlation of predicted cosines and labels of a scored-pair set.
std::optional<double> evaluate_sts(const Model& model, const Dataset& ds, std::size_t dim = 0);

/// InfoNCE (in-batch negatives) of the given pairs under `mask`, no tape.
double contrastive_loss(const Model& model, const std::vector<TrainingExample>& pairs, MaskKind mask,
                        double temperature);

struct TrainOptions {
  /// Stop before this global step (steps of earlier stages count at their
  /// full budget) and leave a resume checkpoint.
  std::optional<long> stop_after;
  bool resume = false;
  std::ostream* log = nullptr;
};

struct RunResult {
  std::vector<StageResult> stages;
  bool interrupted = false;
  std::filesystem::path final_checkpoint;
};

/// Executes a manifest, writing into manifest.output_dir:
///   metrics.jsonl, mining.jsonl, stage<k>-<kind>.ckpt, final.ckpt,
///   resume.ckpt (interrupted runs only), data/<task>.jsonl (synthetic data)
RunResult run_manifest(const RunManifest& manifest, const TrainOptions& options = {});

}  // namespace softembed
