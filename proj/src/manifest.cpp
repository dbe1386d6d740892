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

#include "softembed/manifest.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

#include "softembed/errors.hpp"

namespace softembed {

namespace {

constexpr std::string_view kStageNames[] = {"lm-pretrain", "pair-sft", "weak-contrastive", "supervised"};

std::string_view mask_name(MaskKind k) {
  switch (k) {
    case MaskKind::kCausal: return "causal";
    case MaskKind::kBidirectional: return "bidirectional";
    case MaskKind::kSoft: return "soft";
  }
  return "?";
}

MaskKind parse_mask(const std::string& s) {
  if (s == "causal") return MaskKind::kCausal;
  if (s == "bidirectional") return MaskKind::kBidirectional;
  if (s == "soft") return MaskKind::kSoft;
  throw ConfigError("unknown mask policy '" + s + "'");
}

void check_keys(const YAML::Node& node, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!node.IsMap()) throw ConfigError(where + " must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const YAML::Node& node, const char* key, T& out) {
  if (node[key]) out = node[key].as<T>();
}

SynthConfig parse_synthetic(const YAML::Node& n) {
  check_keys(n,
             {"clusters", "per_cluster", "languages", "seed", "topic_words", "topic_slots", "noise_words",
              "noise_slots", "eval_queries", "label_negatives"},
             "synthetic");
  SynthConfig c;
  read(n, "clusters", c.clusters);
  read(n, "per_cluster", c.per_cluster);
  read(n, "languages", c.languages);
  read(n, "seed", c.seed);
  read(n, "topic_words", c.topic_words);
  read(n, "topic_slots", c.topic_slots);
  read(n, "noise_words", c.noise_words);
  read(n, "noise_slots", c.noise_slots);
  read(n, "eval_queries", c.eval_queries);
  read(n, "label_negatives", c.label_negatives);
  return c;
}

EncoderConfig parse_encoder(const YAML::Node& n) {
  check_keys(n, {"layers", "hidden_dim", "heads", "kv_heads", "ffn_dim", "vocab_size", "max_len", "pooling", "mrl_dims"},
             "encoder");
  EncoderConfig c;
  read(n, "layers", c.layers);
  read(n, "hidden_dim", c.hidden_dim);
  read(n, "heads", c.heads);
  read(n, "kv_heads", c.kv_heads);
  read(n, "ffn_dim", c.ffn_dim);
  read(n, "vocab_size", c.vocab_size);
  read(n, "max_len", c.max_len);
  if (n["pooling"]) c.pooling = parse_pooling_mode(n["pooling"].as<std::string>());
  read(n, "mrl_dims", c.mrl_dims);
  return c;
}

StageConfig parse_stage(const YAML::Node& n, std::size_t index) {
  const std::string where = "stage " + std::to_string(index + 1);
  check_keys(n,
             {"kind", "steps", "batch_size", "learning_rate", "warmup_fraction", "weight_decay", "linear_decay", "grad_clip",
              "mask", "schedule", "data", "tasks", "negatives_per_query", "mrl", "dhnm", "seed", "temperature",
              "cosent_tau", "quality_filter", "eval_data", "eval_every", "early_stop_recall1"},
             where);
  StageConfig s;
  if (!n["kind"]) throw ConfigError(where + " has no kind");
  s.kind = parse_stage_kind(n["kind"].as<std::string>());
  s.mask.kind = s.kind == StageKind::kWeakContrastive ? MaskKind::kSoft
                : s.kind == StageKind::kSupervised    ? MaskKind::kBidirectional
                                                      : MaskKind::kCausal;
  read(n, "steps", s.steps);
  read(n, "batch_size", s.batch_size);
  read(n, "learning_rate", s.learning_rate);
  read(n, "warmup_fraction", s.warmup_fraction);
  read(n, "weight_decay", s.weight_decay);
  read(n, "linear_decay", s.linear_decay);
  read(n, "grad_clip", s.grad_clip);
  if (n["mask"]) s.mask.kind = parse_mask(n["mask"].as<std::string>());
  if (n["schedule"]) s.mask.schedule = parse_schedule_kind(n["schedule"].as<std::string>());
  read(n, "data", s.data);
  if (const auto tasks = n["tasks"]) {
    if (!tasks.IsSequence()) throw ConfigError(where + ": tasks must be a list");
    for (const auto& t : tasks) {
      check_keys(t, {"task", "data", "weight", "batch_size"}, where + " task");
      TaskMix m;
      if (!t["task"] || !t["data"]) throw ConfigError(where + ": each task needs 'task' and 'data'");
      m.task = parse_task_kind(t["task"].as<std::string>());
      m.data = t["data"].as<std::string>();
      read(t, "weight", m.weight);
      read(t, "batch_size", m.batch_size);
      s.tasks.push_back(std::move(m));
    }
  }
  read(n, "negatives_per_query", s.negatives_per_query);
  read(n, "mrl", s.mrl);
  if (const auto d = n["dhnm"]) {
    check_keys(d, {"enabled", "mode", "pool_size"}, where + " dhnm");
    read(d, "enabled", s.dhnm.enabled);
    if (d["mode"]) s.dhnm.mode = parse_dhnm_mode(d["mode"].as<std::string>());
    read(d, "pool_size", s.dhnm.pool_size);
  }
  if (n["seed"]) s.seed = n["seed"].as<std::uint64_t>();
  read(n, "temperature", s.temperature);
  read(n, "cosent_tau", s.cosent_tau);
  if (const auto q = n["quality_filter"]) {
    check_keys(q, {"scorer", "threshold"}, where + " quality_filter");
    read(q, "scorer", s.quality_scorer);
    read(q, "threshold", s.quality_threshold);
  }
  read(n, "eval_data", s.eval_data);
  read(n, "eval_every", s.eval_every);
  if (n["early_stop_recall1"]) s.early_stop_recall1 = n["early_stop_recall1"].as<double>();
  return s;
}

}  // namespace

std::string_view to_string(StageKind kind) { return kStageNames[static_cast<int>(kind)]; }

StageKind parse_stage_kind(std::string_view name) {
  for (int i = 0; i < 4; ++i)
    if (kStageNames[i] == name) return static_cast<StageKind>(i);
  throw ConfigError("unknown stage kind '" + std::string(name) + "'");
}

double StageConfig::effective_warmup_fraction() const {
  if (warmup_fraction >= 0.0) return warmup_fraction;
  return kind == StageKind::kLmPretrain ? 0.05 : 0.02;
}

void StageConfig::validate() const {
  const std::string where = "stage '" + std::string(to_string(kind)) + "': ";
  auto fail = [&](const std::string& m) { throw ConfigError(where + m); };
  if (steps <= 0) fail("steps must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (warmup_fraction > 1.0) fail("warmup_fraction must not exceed 1");
  if (weight_decay < 0.0) fail("weight_decay must be non-negative");
  if (grad_clip < 0.0) fail("grad_clip must be non-negative");
  if (!(temperature > 0.0) || !(cosent_tau > 0.0)) fail("temperatures must be positive");
  if (mask.kind == MaskKind::kSoft && kind != StageKind::kWeakContrastive) {
    fail("the soft mask policy is only allowed in the weak-contrastive stage");
  }
  if (dhnm.enabled && kind != StageKind::kSupervised) fail("dhnm is only allowed in the supervised stage");
  if (mrl && kind != StageKind::kSupervised) fail("mrl is only used in the supervised stage");
  if (kind == StageKind::kSupervised) {
    if (tasks.empty()) fail("the supervised stage needs at least one task");
    for (const auto& t : tasks) {
      if (t.task != TaskKind::kRetrieval && t.task != TaskKind::kClr && t.task != TaskKind::kClassification &&
          t.task != TaskKind::kSts) {
        fail("task '" + std::string(to_string(t.task)) + "' is not a supervised task");
      }
      if (!(t.weight >= 0.0)) fail("task weights must be non-negative");
    }
  } else {
    if (data.empty()) fail("no data given");
    if (!tasks.empty()) fail("tasks are only used by the supervised stage");
  }
  if (quality_scorer != "none" && quality_scorer != "overlap") fail("unknown quality scorer '" + quality_scorer + "'");
  if (!(quality_threshold >= 0.0 && quality_threshold <= 1.0)) fail("quality threshold must lie in [0, 1]");
  if (eval_every < 0) fail("eval_every must be non-negative");
  if ((eval_every > 0 || early_stop_recall1) && eval_data.empty()) fail("evaluation needs eval_data");
}

void RunManifest::validate() const {
  encoder.validate();
  if (stages.empty()) throw ConfigError("manifest has no stages");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    stages[i].validate();
    if (i > 0 && static_cast<int>(stages[i].kind) <= static_cast<int>(stages[i - 1].kind)) {
      throw ConfigError("stages must appear in pipeline order, each at most once");
    }
  }
  auto check_ref = [&](const std::string& ref) {
    if (ref.rfind("synth:", 0) == 0) {
      if (!synthetic) throw ConfigError("data '" + ref + "' needs a 'synthetic' section");
      parse_task_kind(ref.substr(6));
    }
  };
  for (const auto& s : stages) {
    if (!s.data.empty()) check_ref(s.data);
    if (!s.eval_data.empty()) check_ref(s.eval_data);
    for (const auto& t : s.tasks) check_ref(t.data);
  }
}

std::filesystem::path RunManifest::resolve(const std::string& data_ref) const {
  const std::filesystem::path p(data_ref);
  return p.is_absolute() ? p : base_dir / p;
}

RunManifest RunManifest::parse(const std::string& yaml, const std::filesystem::path& base_dir) {
  RunManifest m;
  m.base_dir = base_dir;
  try {
    const YAML::Node root = YAML::Load(yaml);
    check_keys(root, {"seed", "output_dir", "encoder", "synthetic", "init_checkpoint", "stages"}, "manifest");
    read(root, "seed", m.seed);
    if (root["output_dir"]) m.output_dir = root["output_dir"].as<std::string>();
    if (root["encoder"]) m.encoder = parse_encoder(root["encoder"]);
    if (root["synthetic"]) m.synthetic = parse_synthetic(root["synthetic"]);
    read(root, "init_checkpoint", m.init_checkpoint);
    const auto stages = root["stages"];
    if (!stages || !stages.IsSequence()) throw ConfigError("manifest needs a 'stages' list");
    for (std::size_t i = 0; i < stages.size(); ++i) m.stages.push_back(parse_stage(stages[i], i));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read manifest '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

std::string RunManifest::to_yaml() const {
  YAML::Emitter e;
  e << YAML::BeginMap;
  e << YAML::Key << "seed" << YAML::Value << seed;
  e << YAML::Key << "output_dir" << YAML::Value << output_dir.string();
  e << YAML::Key << "encoder" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "layers" << YAML::Value << encoder.layers;
  e << YAML::Key << "hidden_dim" << YAML::Value << encoder.hidden_dim;
  e << YAML::Key << "heads" << YAML::Value << encoder.heads;
  e << YAML::Key << "kv_heads" << YAML::Value << encoder.kv_heads;
  e << YAML::Key << "ffn_dim" << YAML::Value << encoder.ffn_dim;
  e << YAML::Key << "vocab_size" << YAML::Value << encoder.vocab_size;
  e << YAML::Key << "max_len" << YAML::Value << encoder.max_len;
  e << YAML::Key << "pooling" << YAML::Value << std::string(to_string(encoder.pooling));
  e << YAML::Key << "mrl_dims" << YAML::Value << YAML::Flow << encoder.mrl_dims;
  e << YAML::EndMap;
  if (synthetic) {
    const auto& c = *synthetic;
    e << YAML::Key << "synthetic" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "clusters" << YAML::Value << c.clusters;
    e << YAML::Key << "per_cluster" << YAML::Value << c.per_cluster;
    e << YAML::Key << "languages" << YAML::Value << YAML::Flow << c.languages;
    e << YAML::Key << "seed" << YAML::Value << c.seed;
    e << YAML::Key << "topic_words" << YAML::Value << c.topic_words;
    e << YAML::Key << "topic_slots" << YAML::Value << c.topic_slots;
    e << YAML::Key << "noise_words" << YAML::Value << c.noise_words;
    e << YAML::Key << "noise_slots" << YAML::Value << c.noise_slots;
    e << YAML::Key << "eval_queries" << YAML::Value << c.eval_queries;
    e << YAML::Key << "label_negatives" << YAML::Value << c.label_negatives;
    e << YAML::EndMap;
  }
  if (!init_checkpoint.empty()) e << YAML::Key << "init_checkpoint" << YAML::Value << init_checkpoint;
  e << YAML::Key << "stages" << YAML::Value << YAML::BeginSeq;
  for (const auto& s : stages) {
    e << YAML::BeginMap;
    e << YAML::Key << "kind" << YAML::Value << std::string(to_string(s.kind));
    e << YAML::Key << "steps" << YAML::Value << s.steps;
    e << YAML::Key << "batch_size" << YAML::Value << s.batch_size;
    e << YAML::Key << "learning_rate" << YAML::Value << s.learning_rate;
    if (s.warmup_fraction >= 0.0) e << YAML::Key << "warmup_fraction" << YAML::Value << s.warmup_fraction;
    e << YAML::Key << "weight_decay" << YAML::Value << s.weight_decay;
    e << YAML::Key << "linear_decay" << YAML::Value << s.linear_decay;
    if (s.grad_clip > 0.0) e << YAML::Key << "grad_clip" << YAML::Value << s.grad_clip;
    e << YAML::Key << "mask" << YAML::Value << std::string(mask_name(s.mask.kind));
    if (s.mask.kind == MaskKind::kSoft) {
      e << YAML::Key << "schedule" << YAML::Value << std::string(to_string(s.mask.schedule));
    }
    if (!s.data.empty()) e << YAML::Key << "data" << YAML::Value << s.data;
    if (!s.tasks.empty()) {
      e << YAML::Key << "tasks" << YAML::Value << YAML::BeginSeq;
      for (const auto& t : s.tasks) {
        e << YAML::Flow << YAML::BeginMap;
        e << YAML::Key << "task" << YAML::Value << std::string(to_string(t.task));
        e << YAML::Key << "data" << YAML::Value << t.data;
        e << YAML::Key << "weight" << YAML::Value << t.weight;
        if (t.batch_size) e << YAML::Key << "batch_size" << YAML::Value << t.batch_size;
        e << YAML::EndMap;
      }
      e << YAML::EndSeq;
      e << YAML::Key << "negatives_per_query" << YAML::Value << s.negatives_per_query;
      e << YAML::Key << "mrl" << YAML::Value << s.mrl;
      e << YAML::Key << "dhnm" << YAML::Value << YAML::Flow << YAML::BeginMap;
      e << YAML::Key << "enabled" << YAML::Value << s.dhnm.enabled;
      e << YAML::Key << "mode" << YAML::Value << std::string(to_string(s.dhnm.mode));
      e << YAML::Key << "pool_size" << YAML::Value << s.dhnm.pool_size;
      e << YAML::EndMap;
      e << YAML::Key << "cosent_tau" << YAML::Value << s.cosent_tau;
    }
    if (s.seed) e << YAML::Key << "seed" << YAML::Value << *s.seed;
    e << YAML::Key << "temperature" << YAML::Value << s.temperature;
    if (s.quality_scorer != "none") {
      e << YAML::Key << "quality_filter" << YAML::Value << YAML::Flow << YAML::BeginMap;
      e << YAML::Key << "scorer" << YAML::Value << s.quality_scorer;
      e << YAML::Key << "threshold" << YAML::Value << s.quality_threshold;
      e << YAML::EndMap;
    }
    if (!s.eval_data.empty()) e << YAML::Key << "eval_data" << YAML::Value << s.eval_data;
    if (s.eval_every) e << YAML::Key << "eval_every" << YAML::Value << s.eval_every;
    if (s.early_stop_recall1) e << YAML::Key << "early_stop_recall1" << YAML::Value << *s.early_stop_recall1;
    e << YAML::EndMap;
  }
  e << YAML::EndSeq << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

RunManifest toy_manifest() {
  RunManifest m;
  m.seed = 1;
  m.output_dir = "runs/toy";
  m.synthetic = SynthConfig{};

  StageConfig lm;
  lm.kind = StageKind::kLmPretrain;
  lm.steps = 500;
  lm.learning_rate = 2e-3;
  lm.data = "synth:text";

  StageConfig sft;
  sft.kind = StageKind::kPairSft;
  sft.steps = 200;
  sft.learning_rate = 1e-3;
  sft.data = "synth:sft";

  StageConfig weak;
  weak.kind = StageKind::kWeakContrastive;
  weak.steps = 500;
  weak.learning_rate = 1e-3;
  weak.mask = {MaskKind::kSoft, ScheduleKind::kLinear};
  weak.data = "synth:sft";
  weak.quality_scorer = "overlap";
  weak.quality_threshold = 0.2;

  StageConfig sup;
  sup.kind = StageKind::kSupervised;
  sup.steps = 1000;
  sup.learning_rate = 1e-3;
  sup.mask.kind = MaskKind::kBidirectional;
  sup.tasks = {{TaskKind::kRetrieval, "synth:retrieval", 1.0, 4},
               {TaskKind::kClassification, "synth:classification", 1.0, 4},
               {TaskKind::kSts, "synth:sts", 1.0, 32}};
  sup.mrl = true;
  sup.dhnm.enabled = true;
  sup.eval_data = "synth:eval";
  sup.eval_every = 100;

  m.stages = {lm, sft, weak, sup};
  m.validate();
  return m;
}

}  // namespace softembed
