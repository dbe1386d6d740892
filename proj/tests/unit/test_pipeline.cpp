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
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "softembed/checkpoint.hpp"
#include "softembed/cli.hpp"
#include "softembed/errors.hpp"
#include "softembed/manifest.hpp"
#include "softembed/optimizer.hpp"
#include "softembed/trainer.hpp"

namespace softembed {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("softembed_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<nlohmann::json> read_jsonl(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

// A four-stage run small enough for unit tests.
constexpr const char* kSmallManifest = R"(
seed: 3
encoder: {layers: 1, hidden_dim: 16, heads: 4, kv_heads: 2, ffn_dim: 24, vocab_size: 300, max_len: 32, mrl_dims: [8, 16]}
synthetic: {clusters: 6, per_cluster: 8, languages: [en], seed: 2}
stages:
  - {kind: lm-pretrain, steps: 6, batch_size: 4, data: "synth:text"}
  - {kind: pair-sft, steps: 4, batch_size: 4, data: "synth:sft"}
  - {kind: weak-contrastive, steps: 8, batch_size: 4, mask: soft, schedule: linear, data: "synth:sft"}
  - kind: supervised
    steps: 12
    mask: bidirectional
    negatives_per_query: 3
    mrl: true
    dhnm: {enabled: true, mode: absolute, pool_size: 4}
    eval_data: "synth:eval"
    eval_every: 5
    tasks:
      - {task: retrieval, data: "synth:retrieval", batch_size: 2}
      - {task: classification, data: "synth:classification", batch_size: 2}
      - {task: sts, data: "synth:sts", batch_size: 4}
)";

RunManifest small_manifest(const fs::path& out) {
  RunManifest m = RunManifest::parse(kSmallManifest);
  m.output_dir = out;
  return m;
}

TEST(AdamW, ZeroGradientWithoutDecayLeavesParameters) {
  ParameterMap p{{"w", Tensor::vector({1.0, -2.0})}};
  AdamW opt(AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  for (int i = 0; i < 5; ++i) opt.step(p, {{"w", {0.0, 0.0}}}, 0.1);
  EXPECT_EQ(p.at("w").values(), (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(opt.steps_taken(), 5);
}

TEST(AdamW, DescendsOnSquare) {
  ParameterMap p{{"x", Tensor::vector({1.0})}};
  AdamW opt;
  opt.step(p, {{"x", {2.0}}}, 0.1);
  EXPECT_LT(p.at("x")[0], 1.0);
  // First bias-corrected step has magnitude lr plus the decay term.
  EXPECT_NEAR(p.at("x")[0], 1.0 - 0.1 * (2.0 / (2.0 + 1e-8) + 0.01), 1e-12);
}

TEST(AdamW, ConvergesOnConvexQuadratic) {
  const std::vector<double> a = {1.0, 4.0, 0.5}, c = {0.3, -1.2, 2.0};
  ParameterMap p{{"x", Tensor::vector({0.0, 0.0, 0.0})}};
  AdamW opt(AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  for (int s = 0; s < 200; ++s) {
    std::vector<double> g(3);
    for (std::size_t i = 0; i < 3; ++i) g[i] = a[i] * (p.at("x")[i] - c[i]);
    opt.step(p, {{"x", g}}, 0.05);
  }
  double dist = 0.0;
  for (std::size_t i = 0; i < 3; ++i) dist += std::pow(p.at("x")[i] - c[i], 2);
  EXPECT_LT(std::sqrt(dist), 1e-3);
}

TEST(AdamW, NonFiniteGradientAbortsBeforeAnyUpdate) {
  ParameterMap p{{"a", Tensor::vector({1.0})}, {"b", Tensor::vector({2.0})}};
  AdamW opt;
  try {
    opt.step(p, {{"a", {1.0}}, {"b", {std::nan("")}}}, 0.1, 42);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.step(), 42);
  }
  EXPECT_EQ(p.at("a")[0], 1.0);
  EXPECT_EQ(opt.steps_taken(), 0);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const fs::path dir = scratch_dir("ckpt");
  RunManifest m = small_manifest(dir);
  const SynthCorpus corpus = synth_corpus(*m.synthetic);
  Model model = make_model(m.encoder, dataset_strings(corpus.text), 5);
  AdamW opt;
  std::map<std::string, std::vector<double>> grads;
  for (const auto& [name, t] : model.encoder.parameters()) grads[name] = std::vector<double>(t.numel(), 0.01);
  opt.step(model.encoder.mutable_parameters(), grads, 1e-3);

  Checkpoint ck{m.encoder, model.tokenizer, model.encoder.parameters(), opt, R"({"stage":2})"};
  save_checkpoint(dir / "a.ckpt", ck);
  const Checkpoint back = load_checkpoint(dir / "a.ckpt", &m.encoder);
  EXPECT_EQ(back.config, m.encoder);
  EXPECT_EQ(back.tokenizer.words(), model.tokenizer.words());
  EXPECT_EQ(back.state, R"({"stage":2})");
  for (const auto& [name, t] : model.encoder.parameters()) EXPECT_EQ(back.params.at(name).values(), t.values()) << name;
  EXPECT_EQ(back.optimizer.first_moments(), opt.first_moments());
  EXPECT_EQ(back.optimizer.second_moments(), opt.second_moments());

  Model restored{Encoder(back.config, back.params), back.tokenizer};
  const auto& pairs = corpus.eval.examples;
  EXPECT_EQ(contrastive_loss(restored, pairs, MaskKind::kBidirectional, 0.05),
            contrastive_loss(model, pairs, MaskKind::kBidirectional, 0.05));

  save_checkpoint(dir / "b.ckpt", {back.config, back.tokenizer, back.params, back.optimizer, back.state});
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
  fs::remove_all(dir);
}

TEST(Checkpoint, RejectsOtherConfigAndCorruption) {
  const fs::path dir = scratch_dir("ckpt_bad");
  RunManifest m = small_manifest(dir);
  Model model = make_model(m.encoder, {"a b c"}, 1);
  save_checkpoint(dir / "a.ckpt", {m.encoder, model.tokenizer, model.encoder.parameters(), AdamW(), "{}"});
  EncoderConfig other = m.encoder;
  other.hidden_dim = 32;
  other.mrl_dims = {8, 32};
  try {
    load_checkpoint(dir / "a.ckpt", &other);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("hidden_dim=16"), std::string::npos) << msg;
    EXPECT_NE(msg.find("hidden_dim=32"), std::string::npos) << msg;
  }
  std::string bytes = slurp(dir / "a.ckpt");
  bytes[bytes.size() / 2] ^= 0x5a;
  std::ofstream(dir / "bad.ckpt", std::ios::binary) << bytes;
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), CheckpointError);
  std::ofstream(dir / "junk.ckpt", std::ios::binary) << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), CheckpointError);
  fs::remove_all(dir);
}

TEST(Manifest, ParsesAndRoundTrips) {
  const RunManifest m = RunManifest::parse(kSmallManifest);
  ASSERT_EQ(m.stages.size(), 4u);
  EXPECT_EQ(m.stages[2].mask.kind, MaskKind::kSoft);
  EXPECT_EQ(m.stages[3].tasks.size(), 3u);
  EXPECT_EQ(m.stages[3].negatives_per_query, 3u);
  EXPECT_TRUE(m.stages[3].dhnm.enabled);
  EXPECT_EQ(m.stages[0].weight_decay, 0.001);
  EXPECT_DOUBLE_EQ(m.stages[0].effective_warmup_fraction(), 0.05);
  EXPECT_DOUBLE_EQ(m.stages[3].effective_warmup_fraction(), 0.02);
  const RunManifest again = RunManifest::parse(m.to_yaml());
  EXPECT_EQ(again.to_yaml(), m.to_yaml());
}

TEST(Manifest, DefaultsFollowTheToyRun) {
  const RunManifest toy = toy_manifest();
  ASSERT_EQ(toy.stages.size(), 4u);
  EXPECT_EQ(toy.stages[0].steps, 500);
  EXPECT_EQ(toy.stages[1].steps, 200);
  EXPECT_EQ(toy.stages[2].steps, 500);
  EXPECT_EQ(toy.stages[3].steps, 1000);
  EXPECT_EQ(toy.stages[3].negatives_per_query, 7u);
  EXPECT_EQ(StageConfig().negatives_per_query, 7u);
  EXPECT_EQ(toy.encoder, EncoderConfig());
  const RunManifest file = RunManifest::load(fs::path(SOFTEMBED_SOURCE_DIR) / "configs/toy.yaml");
  EXPECT_EQ(file.to_yaml().substr(file.to_yaml().find("stages")), toy.to_yaml().substr(toy.to_yaml().find("stages")));
}

TEST(Manifest, ValidationRules) {
  auto expect_invalid = [](const std::string& yaml) {
    EXPECT_THROW(RunManifest::parse(yaml).validate(), ConfigError) << yaml;
  };
  expect_invalid("stages:\n  - {kind: lm-pretrain, steps: 5, mask: soft, data: x}\n");
  expect_invalid("stages:\n  - {kind: pair-sft, steps: 5, data: x, dhnm: {enabled: true}}\n");
  expect_invalid("stages:\n  - {kind: pair-sft, steps: 5, data: x}\n  - {kind: lm-pretrain, steps: 5, data: x}\n");
  expect_invalid("stages:\n  - {kind: lm-pretrain, steps: 5, data: \"synth:text\"}\n");
  expect_invalid("stages:\n  - {kind: lm-pretrain, steps: 5, data: x, colour: red}\n");
  expect_invalid("stages:\n  - kind: supervised\n    steps: 5\n    tasks: [{task: text, data: x}]\n");
  expect_invalid("encoder: {heads: 3, kv_heads: 2}\nstages:\n  - {kind: lm-pretrain, steps: 5, data: x}\n");
  EXPECT_THROW(RunManifest::parse("stages: [unclosed"), ConfigError);
  EXPECT_THROW(RunManifest::load("/nonexistent/manifest.yaml"), ConfigError);
}

TEST(Pipeline, SmallRunIsDeterministic) {
  const fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b");
  const RunResult ra = run_manifest(small_manifest(a));
  run_manifest(small_manifest(b));
  ASSERT_EQ(ra.stages.size(), 4u);
  EXPECT_FALSE(ra.interrupted);
  EXPECT_EQ(slurp(a / "metrics.jsonl"), slurp(b / "metrics.jsonl"));
  EXPECT_EQ(slurp(a / "mining.jsonl"), slurp(b / "mining.jsonl"));
  EXPECT_EQ(slurp(a / "final.ckpt"), slurp(b / "final.ckpt"));
  for (const char* name : {"stage1-lm-pretrain.ckpt", "stage2-pair-sft.ckpt", "stage3-weak-contrastive.ckpt",
                           "stage4-supervised.ckpt"})
    EXPECT_TRUE(fs::exists(a / name)) << name;
  EXPECT_FALSE(fs::exists(a / "resume.ckpt"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Pipeline, ResumeMatchesUninterruptedRun) {
  const fs::path full = scratch_dir("resume_full");
  run_manifest(small_manifest(full));
  // Global steps: 6 + 4 + 8 = 18 before stage 4; stop mid-stage 3 and mid-stage 4.
  for (long stop : {13L, 25L}) {
    const fs::path part = scratch_dir("resume_part" + std::to_string(stop));
    TrainOptions first;
    first.stop_after = stop;
    const RunResult r1 = run_manifest(small_manifest(part), first);
    EXPECT_TRUE(r1.interrupted);
    EXPECT_TRUE(fs::exists(part / "resume.ckpt"));
    TrainOptions second;
    second.resume = true;
    run_manifest(small_manifest(part), second);
    EXPECT_EQ(slurp(part / "metrics.jsonl"), slurp(full / "metrics.jsonl")) << "stop " << stop;
    EXPECT_EQ(slurp(part / "mining.jsonl"), slurp(full / "mining.jsonl")) << "stop " << stop;
    EXPECT_EQ(slurp(part / "final.ckpt"), slurp(full / "final.ckpt")) << "stop " << stop;
    EXPECT_FALSE(fs::exists(part / "resume.ckpt"));
    fs::remove_all(part);
  }
  fs::remove_all(full);
}

TEST(Pipeline, StageRecordsShowScheduleEndpointsAndRoundRobin) {
  const fs::path dir = scratch_dir("records");
  run_manifest(small_manifest(dir));
  std::vector<double> alphas;
  std::vector<std::string> tasks;
  for (const auto& r : read_jsonl(dir / "metrics.jsonl")) {
    if (!r.contains("loss")) continue;
    if (r["stage"] == 2) alphas.push_back(r["alpha"].get<double>());
    if (r["stage"] == 3) tasks.push_back(r["task"].get<std::string>());
  }
  ASSERT_EQ(alphas.size(), 8u);
  EXPECT_EQ(alphas.front(), 0.0);
  EXPECT_EQ(alphas.back(), 1.0);
  for (std::size_t i = 1; i < alphas.size(); ++i) EXPECT_GE(alphas[i], alphas[i - 1]);
  ASSERT_EQ(tasks.size(), 12u);
  for (std::size_t i = 0; i + 3 <= tasks.size(); i += 3) {
    std::set<std::string> cycle(tasks.begin() + static_cast<long>(i), tasks.begin() + static_cast<long>(i) + 3);
    EXPECT_EQ(cycle.size(), 3u) << "cycle at " << i;
  }
  fs::remove_all(dir);
}

TEST(Pipeline, SoftScheduleEndpointsAreExactMasks) {
  // The stage clock runs 0..steps-1 over a horizon of steps-1.
  for (long steps : {2L, 8L, 500L}) {
    const ScheduleState first{ScheduleKind::kLinear, 0, steps - 1};
    const ScheduleState last{ScheduleKind::kLinear, steps - 1, steps - 1};
    for (std::size_t n : {4u, 16u}) {
      EXPECT_EQ(build_soft_mask(first, n, n).entries, causal_mask(n).entries);
      EXPECT_EQ(build_soft_mask(last, n, n).entries, bidirectional_mask(n).entries);
    }
  }
}

TEST(Pipeline, ClassificationBatchesUseLabelTexts) {
  SynthConfig c;
  c.clusters = 5;
  c.per_cluster = 6;
  const SynthCorpus corpus = synth_corpus(c);
  ASSERT_FALSE(corpus.classification.examples.empty());
  for (const auto& e : corpus.classification.examples) {
    const auto& t = std::get<Triplet>(e.body);
    EXPECT_EQ(t.positive, corpus.cluster_labels.at(static_cast<std::size_t>(e.group)));
    for (const auto& n : t.negatives) {
      EXPECT_NE(n, t.positive);
      EXPECT_NE(std::find(corpus.cluster_labels.begin(), corpus.cluster_labels.end(), n), corpus.cluster_labels.end());
    }
  }
}

TEST(Pipeline, DataStageMismatchIsRejected) {
  const fs::path dir = scratch_dir("mismatch");
  RunManifest m = small_manifest(dir);
  m.stages.resize(1);
  m.stages[0].data = "synth:sts";
  EXPECT_THROW(run_manifest(m), DataError);
  fs::remove_all(dir);
}

int cli(std::vector<std::string> args, std::string* out_text = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (out_text) *out_text = out.str();
  return code;
}

TEST(Cli, ExitCodesByCategory) {
  const fs::path dir = scratch_dir("cli");
  EXPECT_EQ(cli({"frobnicate"}), kExitUsage);
  EXPECT_EQ(cli({"mask-demo", "--bogus"}), kExitUsage);
  EXPECT_EQ(cli({"mask-demo", "--schedule", "cubic"}), kExitUsage);
  EXPECT_EQ(cli({"gen-clr", "--input", "a", "--output", "b", "--distribution", "c", "--translator", "babel"}),
            kExitUsage);
  EXPECT_EQ(cli({"train", "--manifest", (dir / "missing.yaml").string()}), kExitMissingFile);
  std::ofstream(dir / "broken.yaml") << "stages: [unclosed";
  EXPECT_EQ(cli({"train", "--manifest", (dir / "broken.yaml").string()}), kExitConfig);
  EXPECT_EQ(cli({"eval", "--checkpoint", (dir / "none.ckpt").string(), "--data", (dir / "none.jsonl").string()}),
            kExitMissingFile);
  std::ofstream(dir / "junk.ckpt") << "junk";
  std::ofstream(dir / "data.jsonl") << "{}\n";
  EXPECT_EQ(cli({"eval", "--checkpoint", (dir / "junk.ckpt").string(), "--data", (dir / "data.jsonl").string()}),
            kExitCheckpoint);
  fs::remove_all(dir);
}

TEST(Cli, MaskDemoPrintsGoldenTrajectory) {
  std::string out;
  ASSERT_EQ(cli({"mask-demo", "--n", "16", "--schedule", "linear"}, &out), kExitOk);
  std::vector<int> ranks;
  std::istringstream in(out);
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] != '{') continue;
    const auto j = nlohmann::json::parse(line);
    if (j.contains("rank")) ranks.push_back(j["rank"].get<int>());
  }
  EXPECT_EQ(ranks, (std::vector<int>{16, 14, 12, 10, 8, 6, 4, 2, 1}));
}

TEST(Cli, TrainTwiceGivesIdenticalMetricsThenEvalPrintsRecall) {
  const fs::path dir = scratch_dir("cli_train");
  std::ofstream(dir / "m.yaml") << kSmallManifest;
  ASSERT_EQ(cli({"train", "--manifest", (dir / "m.yaml").string(), "--seed", "7", "--output", (dir / "a").string(),
                 "--quiet"}),
            kExitOk);
  ASSERT_EQ(cli({"train", "--manifest", (dir / "m.yaml").string(), "--seed", "7", "--output", (dir / "b").string(),
                 "--quiet"}),
            kExitOk);
  EXPECT_EQ(slurp(dir / "a/metrics.jsonl"), slurp(dir / "b/metrics.jsonl"));
  std::string out;
  ASSERT_EQ(cli({"eval", "--checkpoint", (dir / "a/final.ckpt").string(), "--data",
                 (dir / "a/data/eval.jsonl").string()},
                &out),
            kExitOk);
  EXPECT_NE(out.find("recall@1"), std::string::npos) << out;
  fs::remove_all(dir);
}

TEST(Cli, GradCheckPasses) {
  std::string out;
  EXPECT_EQ(cli({"grad-check", "--cases", "3"}, &out), kExitOk);
}

}  // namespace
}  // namespace softembed
