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

#include "softembed/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>

#include "json.hpp"
#include "softembed/checkpoint.hpp"
#include "softembed/datagen.hpp"
#include "softembed/diagnostics.hpp"
#include "softembed/errors.hpp"
#include "softembed/eval.hpp"
#include "softembed/manifest.hpp"
#include "softembed/mask_schedule.hpp"
#include "softembed/trainer.hpp"

namespace softembed {

namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

class MissingFileError : public std::runtime_error {
 public:
  explicit MissingFileError(const fs::path& p) : std::runtime_error("no such file: '" + p.string() + "'") {}
};

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw MissingFileError(p);
}

/// SOFTEMBED_THREADS must be a positive integer when set. Work runs on the
/// calling thread, so the value only bounds, never adds, parallelism.
void check_thread_env() {
  if (const char* t = std::getenv("SOFTEMBED_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(t, &end, 10);
    if (end == t || *end != '\0' || n < 1) {
      throw ConfigError(std::string("SOFTEMBED_THREADS must be a positive integer, got '") + t + "'");
    }
  }
}

struct TrainArgs {
  std::string manifest;
  std::optional<std::uint64_t> seed;
  std::string output;
  std::optional<long> stop_after;
  bool resume = false;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  require_file(a.manifest);
  RunManifest m = RunManifest::load(a.manifest);
  if (a.seed) m.seed = *a.seed;
  if (const char* env = std::getenv("SOFTEMBED_OUTPUT_DIR"); env && *env) m.output_dir = env;
  if (!a.output.empty()) m.output_dir = a.output;
  if (m.output_dir.is_relative()) m.output_dir = fs::current_path() / m.output_dir;
  if (!m.init_checkpoint.empty()) require_file(m.resolve(m.init_checkpoint));
  TrainOptions opts;
  opts.stop_after = a.stop_after;
  opts.resume = a.resume;
  opts.log = a.quiet ? nullptr : &out;
  const RunResult r = run_manifest(m, opts);
  Json stages = Json::array();
  for (std::size_t i = 0; i < r.stages.size(); ++i) {
    const auto& s = r.stages[i];
    Json j{{"kind", std::string(to_string(s.kind))}, {"steps_run", s.steps_run}, {"final_loss", s.final_loss}};
    if (s.recall_at_1) j["recall@1"] = *s.recall_at_1;
    if (s.early_stopped) j["early_stopped"] = true;
    if (s.replacements || s.exhausted) {
      j["replacements"] = s.replacements;
      j["exhausted"] = s.exhausted;
    }
    stages.push_back(j);
  }
  Json summary{{"command", "train"},
               {"output_dir", m.output_dir.string()},
               {"interrupted", r.interrupted},
               {"stages", stages}};
  if (!r.interrupted) summary["checkpoint"] = r.final_checkpoint.string();
  out << summary.dump() << '\n';
  if (!a.quiet) {
    out << (r.interrupted ? "run interrupted; resume with --resume\n"
                          : "run complete; final checkpoint " + r.final_checkpoint.string() + "\n");
  }
  return kExitOk;
}

struct GenClrArgs {
  std::string input, output, distribution;
  std::string translator = "mock";
  std::uint64_t seed = 1;
  bool normalize = false;
};

int cmd_gen_clr(const GenClrArgs& a, std::ostream& out) {
  require_file(a.input);
  require_file(a.distribution);
  const auto dist = LanguageDistribution::load(a.distribution, a.normalize);
  const Dataset in = read_dataset(fs::path(a.input));
  std::unique_ptr<TranslatorClient> tr;
  if (a.translator == "mock") tr = std::make_unique<MockTranslator>();
  else tr = std::make_unique<CommandTranslator>(a.translator.substr(4));
  ClrReport rep;
  Dataset outds;
  outds.task = TaskKind::kClr;
  outds.examples = make_clr_dataset(in.examples, *tr, dist, a.seed, &rep);
  std::set<std::string> langs;
  for (const auto& e : outds.examples) {
    langs.insert(e.query_lang);
    langs.insert(e.passage_lang);
  }
  outds.languages.assign(langs.begin(), langs.end());
  write_dataset(fs::path(a.output), outds);
  for (const auto& f : rep.failures) out << Json{{"event", "translation_failure"}, {"detail", f}}.dump() << '\n';
  out << Json{{"command", "gen-clr"}, {"input", in.examples.size()}, {"emitted", rep.emitted},
              {"failures", rep.failures.size()}, {"output", a.output}}
             .dump()
      << '\n';
  out << "wrote " << rep.emitted << " CLR examples to " << a.output << " (" << rep.failures.size()
      << " failures)\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, data, metrics, projection;
  std::string split = "eval";
  std::size_t dim = 0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  require_file(a.checkpoint);
  require_file(a.data);
  auto ck = load_checkpoint(a.checkpoint);
  const Model model{Encoder(ck.config, std::move(ck.params)), std::move(ck.tokenizer)};
  const Dataset ds = read_dataset(fs::path(a.data));
  std::ofstream metrics_file;
  if (!a.metrics.empty()) metrics_file.open(a.metrics, std::ios::app);
  std::ostream& rec = a.metrics.empty() ? out : metrics_file;
  const bool sts = !ds.examples.empty() && std::holds_alternative<ScoredPair>(ds.examples.front().body);
  if (sts) {
    const auto rho = evaluate_sts(model, ds, a.dim);
    write_metric(rec, "spearman", a.split, rho ? *rho : std::numeric_limits<double>::quiet_NaN());
    out << "Spearman: " << (rho ? std::to_string(*rho) : std::string("undefined (constant input)")) << '\n';
    return kExitOk;
  }
  const auto s = evaluate_retrieval(model, ds, a.dim);
  write_metric(rec, "recall@1", a.split, s.recall_at_1);
  write_metric(rec, "recall@10", a.split, s.recall_at_10);
  write_metric(rec, "ndcg@10", a.split, s.ndcg_at_10);
  out << std::fixed << std::setprecision(4) << "Recall@1: " << s.recall_at_1 << "  Recall@10: " << s.recall_at_10
      << "  nDCG@10: " << s.ndcg_at_10 << "  (" << s.queries << " queries, " << s.corpus << " passages)\n";

  std::set<std::string> langs;
  for (const auto& e : ds.examples)
    if (!e.query_lang.empty()) langs.insert(e.query_lang);
  if (langs.size() >= 2) {
    std::vector<std::string> texts;
    std::vector<std::string> tags;
    for (const auto& e : ds.examples) {
      texts.push_back(e.query());
      tags.push_back(e.query_lang);
    }
    const auto vecs = embed_texts(model, texts, MaskKind::kBidirectional, a.dim);
    std::vector<SentenceEmbedding> embs;
    for (std::size_t i = 0; i < vecs.size(); ++i) embs.push_back({vecs[i], vecs[i].size(), tags[i]});
    const auto rep = centroid_analysis(embs);
    write_metric(rec, "centroid_distance", a.split, rep.mean_distance);
    out << "mean inter-language centroid distance: " << rep.mean_distance << '\n';
    if (!a.projection.empty()) {
      std::ofstream p(a.projection);
      if (!p) throw DataError("cannot write projection file '" + a.projection + "'");
      write_projection(p, rep);
    }
  }
  return kExitOk;
}

struct MaskDemoArgs {
  std::size_t n = 16;
  std::size_t l = 0;
  std::string schedule = "linear";
  std::size_t samples = 9;
  double eps = 1e-8;
  bool show = false;
};

int cmd_mask_demo(const MaskDemoArgs& a, std::ostream& out) {
  if (a.n == 0 || a.samples < 2) throw ConfigError("mask-demo needs n >= 1 and samples >= 2");
  const ScheduleKind kind = parse_schedule_kind(a.schedule);
  const std::size_t l = a.l ? a.l : a.n;
  const long tau = static_cast<long>(a.samples) - 1;
  std::vector<int> ranks;
  for (long t = 0; t <= tau; ++t) {
    const ScheduleState st{kind, t, tau};
    const auto mask = build_soft_mask(st, a.n, l);
    const int rank = mask_numerical_rank(mask, a.eps);
    ranks.push_back(rank);
    out << Json{{"schedule", a.schedule}, {"n", a.n}, {"l", l}, {"t", t}, {"tau", tau},
                {"alpha", schedule_alpha(st)}, {"rank", rank}}
               .dump()
        << '\n';
    if (a.show) {
      for (std::size_t i = 1; i <= a.n; ++i) {
        out << "  ";
        for (std::size_t j = 1; j <= a.n; ++j) out << std::fixed << std::setprecision(2) << mask(i, j) << ' ';
        out << '\n';
      }
      out.unsetf(std::ios::fixed);
    }
  }
  out << "rank trajectory (" << a.schedule << ", N=" << a.n << "):";
  for (int r : ranks) out << ' ' << r;
  out << '\n';
  return kExitOk;
}

int cmd_grad_check(std::uint64_t seed, std::size_t cases, std::ostream& out) {
  const auto results = run_grad_checks(seed, cases);
  bool ok = true;
  for (const auto& r : results) {
    out << Json{{"check", r.name}, {"cases", r.cases}, {"max_rel_error", r.max_error},
                {"tolerance", r.tolerance}, {"pass", r.passed()}}
               .dump()
        << '\n';
    ok = ok && r.passed();
  }
  for (const auto& r : results) {
    out << std::left << std::setw(14) << r.name << (r.passed() ? "PASS" : "FAIL") << "  max rel error "
        << std::scientific << std::setprecision(2) << r.max_error << " (tol " << r.tolerance << ")\n";
    out.unsetf(std::ios::floatfield);
  }
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"softembed: sentence-embedding training pipeline"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "run a training manifest");
  train->add_option("--manifest", ta.manifest, "run manifest (YAML)")->required();
  train->add_option("--seed", ta.seed, "override the manifest seed");
  train->add_option("--output", ta.output, "output directory (overrides SOFTEMBED_OUTPUT_DIR)");
  train->add_option("--stop-after", ta.stop_after, "stop before this global step, leaving resume.ckpt");
  train->add_flag("--resume", ta.resume, "continue from <output>/resume.ckpt");
  train->add_flag("--quiet", ta.quiet, "only print the JSON summary");

  GenClrArgs ga;
  auto* gen = app.add_subcommand("gen-clr", "translate queries into cross-lingual retrieval pairs");
  gen->add_option("--input", ga.input, "input dataset (pairs or triplets with language tags)")->required();
  gen->add_option("--output", ga.output, "output dataset")->required();
  gen->add_option("--distribution", ga.distribution, "language distribution (YAML)")->required();
  gen->add_option("--translator", ga.translator, "'mock' or 'cmd:<command>'")
      ->check(CLI::Validator(
          [](const std::string& v) {
            return v == "mock" || (v.rfind("cmd:", 0) == 0 && v.size() > 4)
                       ? std::string()
                       : std::string("must be 'mock' or 'cmd:<command>'");
          },
          "TRANSLATOR"));
  gen->add_option("--seed", ga.seed, "language sampling seed");
  gen->add_flag("--normalize", ga.normalize, "rescale proportions that do not sum to 1");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "score a checkpoint on a retrieval or STS dataset");
  ev->add_option("--checkpoint", ea.checkpoint, "model checkpoint")->required();
  ev->add_option("--data", ea.data, "evaluation dataset")->required();
  ev->add_option("--dim", ea.dim, "MRL prefix dimension (default: full)");
  ev->add_option("--metrics", ea.metrics, "append metric records to this file instead of stdout");
  ev->add_option("--split", ea.split, "split name recorded with each metric");
  ev->add_option("--projection", ea.projection, "write the PCA projection table here (multilingual data)");

  MaskDemoArgs ma;
  auto* md = app.add_subcommand("mask-demo", "print soft-mask rank trajectories");
  md->add_option("--n", ma.n, "sequence length")->check(CLI::PositiveNumber);
  md->add_option("--l", ma.l, "mask scale l (default: n)");
  md->add_option("--schedule", ma.schedule, "linear | accelerating | decelerating")
      ->check(CLI::IsMember({"linear", "accelerating", "decelerating"}));
  md->add_option("--samples", ma.samples, "number of evenly spaced t values");
  md->add_option("--eps", ma.eps, "relative singular-value threshold");
  md->add_flag("--show", ma.show, "print every mask");

  std::uint64_t gc_seed = 1;
  std::size_t gc_cases = 50;
  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient checks");
  gc->add_option("--seed", gc_seed, "seed");
  gc->add_option("--cases", gc_cases, "cases per check");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    check_thread_env();
    if (*train) return cmd_train(ta, out);
    if (*gen) return cmd_gen_clr(ga, out);
    if (*ev) return cmd_eval(ea, out);
    if (*md) return cmd_mask_demo(ma, out);
    if (*gc) return cmd_grad_check(gc_seed, gc_cases, out);
  } catch (const MissingFileError& e) {
    err << "error: " << e.what() << '\n';
    return kExitMissingFile;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical error at step " << e.step() << ": " << e.what() << '\n';
    return kExitNumerical;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kExitCheckpoint;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace softembed
