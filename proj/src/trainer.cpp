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

#include "softembed/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "softembed/checkpoint.hpp"
#include "softembed/errors.hpp"
#include "softembed/eval.hpp"
#include "softembed/losses.hpp"
#include "softembed/ops.hpp"
#include "softembed/rng.hpp"

namespace softembed {

using Json = nlohmann::ordered_json;

namespace {

constexpr std::size_t kEmbedChunk = 64;

// ---------------------------------------------------------------------------
// Shared step machinery

/// Mask factory keyed by sequence length, rebuilt once per step.
class MaskCache {
 public:
  MaskCache(MaskKind kind, std::optional<ScheduleState> schedule) : kind_(kind), schedule_(schedule) {}

  const AttentionMask& get(std::size_t n) {
    auto it = cache_.find(n);
    if (it != cache_.end()) return it->second;
    AttentionMask m = kind_ == MaskKind::kCausal          ? causal_mask(n)
                      : kind_ == MaskKind::kBidirectional ? bidirectional_mask(n)
                                                          : build_soft_mask(*schedule_, n, n);
    return cache_.emplace(n, std::move(m)).first->second;
  }

 private:
  MaskKind kind_;
  std::optional<ScheduleState> schedule_;
  std::map<std::size_t, AttentionMask> cache_;
};

std::vector<int> tokenize(const Model& model, const std::string& text) {
  return model.tokenizer.encode(text, model.encoder.config().max_len);
}

/// Pooled, L2-normalized [N x hidden] embeddings of `texts`.
Tensor embed(const Model& model, const ParameterMap& params, const std::vector<std::string>& texts,
             MaskCache& masks) {
  std::vector<std::vector<int>> seqs;
  seqs.reserve(texts.size());
  for (const auto& t : texts) seqs.push_back(tokenize(model, t));
  const PackedBatch batch = PackedBatch::pack(seqs);
  std::vector<AttentionMask> ms;
  ms.reserve(seqs.size());
  for (const auto& s : seqs) ms.push_back(masks.get(s.size()));
  const Tensor states = model.encoder.forward(params, batch, ms);
  return l2_normalize_rows(model.encoder.pool_batch(states, batch));
}

Tensor prefix(const Tensor& e, std::size_t d) {
  return d == e.cols() ? e : l2_normalize_rows(slice_cols(e, 0, d));
}

/// `count` distinct indices from [0, n), deterministic in `rng`.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, Rng& rng) {
  count = std::min(count, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(count);
  return idx;
}

/// Linear warmup over the first ceil(fraction * steps) steps, then constant
/// or linear decay reaching zero after the last step.
double learning_rate(const StageConfig& cfg, long step) {
  const long warm = static_cast<long>(std::ceil(cfg.effective_warmup_fraction() * static_cast<double>(cfg.steps)));
  if (step < warm) return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warm);
  if (!cfg.linear_decay) return cfg.learning_rate;
  const double remaining = static_cast<double>(cfg.steps - step) / static_cast<double>(cfg.steps - warm);
  return cfg.learning_rate * remaining;
}

std::map<std::string, std::vector<double>> collect_grads(const Tape& tape, const ParameterMap& tracked) {
  std::map<std::string, std::vector<double>> grads;
  for (const auto& [name, t] : tracked) grads.emplace(name, tape.grad(t).values());
  return grads;
}

struct TextPair {
  std::string query;
  std::string positive;
};

// ---------------------------------------------------------------------------
// Supervised-stage task streams

enum class NegativeSource { kNone, kExplicit, kMined };

struct TaskStream {
  TaskMix mix;
  const Dataset* ds = nullptr;
  std::size_t batch = 0;
  NegativeSource source = NegativeSource::kNone;
  std::size_t k = 0;
  bool live_mining = false;
  /// Distinct passages (mined negatives index into this).
  std::vector<std::string> corpus;
  std::vector<std::size_t> positive_id;
  std::vector<long> corpus_group;
};

const std::vector<std::string>* explicit_negatives(const TrainingExample& e) {
  if (auto* t = std::get_if<Triplet>(&e.body)) return &t->negatives;
  return nullptr;
}

TaskStream make_stream(const StageConfig& cfg, const TaskMix& mix, const Dataset* ds) {
  TaskStream s;
  s.mix = mix;
  s.ds = ds;
  s.batch = mix.batch_size ? mix.batch_size : cfg.batch_size;
  const std::string name(to_string(mix.task));
  if (ds->examples.empty()) throw DataError("task '" + name + "' has no examples");
  if (mix.task == TaskKind::kSts) {
    for (const auto& e : ds->examples)
      if (!std::holds_alternative<ScoredPair>(e.body)) throw DataError("sts task needs scored pairs");
    return s;
  }
  for (const auto& e : ds->examples)
    if (std::holds_alternative<ScoredPair>(e.body)) throw DataError("task '" + name + "' needs pairs or triplets");

  std::size_t min_explicit = SIZE_MAX;
  for (const auto& e : ds->examples) {
    const auto* n = explicit_negatives(e);
    min_explicit = std::min(min_explicit, n ? n->size() : 0);
  }
  const bool minable = mix.task == TaskKind::kRetrieval || mix.task == TaskKind::kClr;
  if (minable && (cfg.dhnm.enabled || min_explicit == 0) && cfg.negatives_per_query > 0) {
    s.source = NegativeSource::kMined;
    s.live_mining = cfg.dhnm.enabled;
    std::map<std::string, std::size_t> ids;
    for (const auto& e : ds->examples) {
      auto [it, fresh] = ids.emplace(e.positive(), s.corpus.size());
      if (fresh) {
        s.corpus.push_back(e.positive());
        s.corpus_group.push_back(e.group);
      }
      s.positive_id.push_back(it->second);
    }
    s.k = cfg.negatives_per_query;
  } else if (min_explicit > 0 && cfg.negatives_per_query > 0) {
    s.source = NegativeSource::kExplicit;
    s.k = std::min(cfg.negatives_per_query, min_explicit);
  }
  return s;
}

/// Seed-encoder ranking of non-cluster passages: the top K become the
/// initial negatives, the next pool_size the replacement pool.
NegativeMiner build_miner(const Model& model, const StageConfig& cfg, TaskStream& s) {
  std::vector<std::string> queries;
  for (const auto& e : s.ds->examples) queries.push_back(e.query());
  const auto qv = embed_texts(model, queries);
  const auto pv = embed_texts(model, s.corpus);
  std::size_t fewest = SIZE_MAX;
  std::vector<std::vector<std::size_t>> ranked(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const long g = s.ds->examples[i].group;
    std::vector<ScoredId> cands;
    for (std::size_t p = 0; p < s.corpus.size(); ++p) {
      if (p == s.positive_id[i] || (g >= 0 && s.corpus_group[p] == g)) continue;
      double dot = 0.0;
      for (std::size_t j = 0; j < qv[i].size(); ++j) dot += qv[i][j] * pv[p][j];
      cands.push_back({p, dot});
    }
    std::sort(cands.begin(), cands.end(), [](const ScoredId& a, const ScoredId& b) {
      return a.score > b.score || (a.score == b.score && a.id < b.id);
    });
    for (const auto& c : cands) ranked[i].push_back(c.id);
    fewest = std::min(fewest, ranked[i].size());
  }
  s.k = std::min(s.k, fewest);
  if (s.k == 0) {
    s.source = NegativeSource::kNone;
    return NegativeMiner(cfg.dhnm.mode, 0);
  }
  NegativeMiner miner(cfg.dhnm.mode, s.k);
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& r = ranked[i];
    const std::size_t end = std::min(r.size(), s.k + (s.live_mining ? cfg.dhnm.pool_size : 0));
    miner.add_query(i, std::span(r).first(s.k), std::vector<std::size_t>(r.begin() + s.k, r.begin() + end));
  }
  return miner;
}

std::vector<std::size_t> task_order(const std::vector<TaskStream>& streams) {
  std::vector<std::size_t> order(streams.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return streams[a].ds->examples.size() > streams[b].ds->examples.size();
  });
  return order;
}

// ---------------------------------------------------------------------------
// Data checks for stages 1-3

std::vector<TextPair> contrastive_pairs(const StageConfig& cfg, const Dataset& ds, std::size_t& filtered) {
  std::vector<TrainingExample> pairs;
  for (const auto& r : ds.records) {
    try {
      pairs.push_back(pair_from_sft(r));
    } catch (const DataError&) {
      ++filtered;
    }
  }
  for (const auto& e : ds.examples) {
    if (std::holds_alternative<ScoredPair>(e.body)) continue;
    TrainingExample p = e;
    p.body = Pair{e.query(), e.positive()};
    pairs.push_back(std::move(p));
  }
  if (cfg.quality_scorer == "overlap") {
    OverlapScorer scorer;
    const std::size_t before = pairs.size();
    pairs = quality_filter(pairs, scorer, cfg.quality_threshold);
    filtered += before - pairs.size();
  }
  std::vector<TextPair> out;
  for (const auto& p : pairs) out.push_back({p.query(), p.positive()});
  return out;
}

struct LmSequence {
  std::vector<int> tokens;
  /// Positions (into `tokens`) whose next token is a training target.
  std::size_t first_target = 0;
};

std::vector<LmSequence> lm_sequences(const StageConfig& cfg, const Model& model, const Dataset& ds) {
  const std::size_t max_len = model.encoder.config().max_len;
  std::vector<LmSequence> out;
  auto strip_eos = [](std::vector<int> v) {
    v.pop_back();
    return v;
  };
  if (cfg.kind == StageKind::kLmPretrain) {
    for (const auto& t : ds.texts) {
      LmSequence s;
      s.tokens.push_back(Tokenizer::kBos);
      const auto ids = model.tokenizer.encode(t, max_len - 1);
      s.tokens.insert(s.tokens.end(), ids.begin(), ids.end());
      out.push_back(std::move(s));
    }
    if (out.empty()) throw DataError("lm-pretrain stage needs text records");
    return out;
  }
  auto add = [&](const std::string& prompt, const std::string& response) {
    const auto resp = model.tokenizer.encode(response, std::max<std::size_t>(2, max_len / 2));
    const std::size_t room = max_len - 1 - resp.size();
    auto p = strip_eos(model.tokenizer.encode(prompt, room + 1));
    LmSequence s;
    s.tokens.push_back(Tokenizer::kBos);
    s.tokens.insert(s.tokens.end(), p.begin(), p.end());
    s.first_target = s.tokens.size() - 1;
    s.tokens.insert(s.tokens.end(), resp.begin(), resp.end());
    out.push_back(std::move(s));
  };
  for (const auto& r : ds.records) {
    if (r.output.empty()) continue;
    const auto pair = pair_from_sft(r);
    add(pair.query(), pair.positive());
  }
  for (const auto& e : ds.examples)
    if (!std::holds_alternative<ScoredPair>(e.body)) add(e.query(), e.positive());
  if (out.empty()) throw DataError("pair-sft stage needs instruction records or pairs");
  return out;
}

void write_json(std::ostream* os, const Json& j) {
  if (os) *os << j.dump() << '\n';
}

}  // namespace

// ---------------------------------------------------------------------------
// Public helpers

Model make_model(const EncoderConfig& config, const std::vector<std::string>& texts, std::uint64_t seed) {
  return Model{Encoder(config, seed), Tokenizer::build(texts, config.vocab_size)};
}

std::vector<std::string> dataset_strings(const Dataset& ds) {
  std::vector<std::string> out(ds.texts);
  for (const auto& r : ds.records) {
    out.push_back(r.instruction);
    out.push_back(r.input);
    out.push_back(r.output);
  }
  for (const auto& e : ds.examples) {
    if (auto* p = std::get_if<Pair>(&e.body)) {
      out.push_back(p->query);
      out.push_back(p->positive);
    } else if (auto* t = std::get_if<Triplet>(&e.body)) {
      out.push_back(t->query);
      out.push_back(t->positive);
      out.insert(out.end(), t->negatives.begin(), t->negatives.end());
    } else {
      const auto& s = std::get<ScoredPair>(e.body);
      out.push_back(s.a);
      out.push_back(s.b);
    }
  }
  return out;
}

std::vector<std::vector<double>> embed_texts(const Model& model, const std::vector<std::string>& texts,
                                             MaskKind mask, std::size_t dim) {
  if (mask == MaskKind::kSoft) throw ConfigError("embed_texts: a soft mask needs a schedule state");
  MaskCache masks(mask, std::nullopt);
  const std::size_t h = model.encoder.config().hidden_dim;
  if (dim == 0) dim = h;
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (std::size_t begin = 0; begin < texts.size(); begin += kEmbedChunk) {
    const std::size_t end = std::min(texts.size(), begin + kEmbedChunk);
    const std::vector<std::string> chunk(texts.begin() + static_cast<std::ptrdiff_t>(begin),
                                         texts.begin() + static_cast<std::ptrdiff_t>(end));
    const Tensor e = prefix(embed(model, model.encoder.parameters(), chunk, masks), dim);
    for (std::size_t r = 0; r < e.rows(); ++r) out.emplace_back(e.row(r).begin(), e.row(r).end());
  }
  return out;
}

RetrievalScores evaluate_retrieval(const Model& model, const Dataset& ds, std::size_t dim) {
  std::vector<std::string> queries, corpus;
  std::map<std::string, std::size_t> ids;
  RetrievalRun run;
  for (const auto& e : ds.examples) {
    if (std::holds_alternative<ScoredPair>(e.body)) throw DataError("retrieval evaluation needs pairs");
    auto [it, fresh] = ids.emplace(e.positive(), corpus.size());
    if (fresh) corpus.push_back(e.positive());
    queries.push_back(e.query());
    run.relevant.push_back({it->second});
  }
  if (queries.empty()) throw DataError("retrieval evaluation set is empty");
  const auto qv = embed_texts(model, queries, MaskKind::kBidirectional, dim);
  const auto cv = embed_texts(model, corpus, MaskKind::kBidirectional, dim);
  auto ranked = exact_search(qv, cv, std::max<std::size_t>(10, 1));
  run.ranked = std::move(ranked.ranked);
  RetrievalScores s;
  s.recall_at_1 = recall_at_k(run, 1);
  s.recall_at_10 = recall_at_k(run, 10);
  s.ndcg_at_10 = ndcg_at_10(run);
  s.queries = queries.size();
  s.corpus = corpus.size();
  return s;
}

std::optional<double> evaluate_sts(const Model& model, const Dataset& ds, std::size_t dim) {
  std::vector<std::string> a, b;
  std::vector<double> labels;
  for (const auto& e : ds.examples) {
    const auto* s = std::get_if<ScoredPair>(&e.body);
    if (!s) throw DataError("STS evaluation needs scored pairs");
    a.push_back(s->a);
    b.push_back(s->b);
    labels.push_back(s->label);
  }
  if (a.size() < 2) throw DataError("STS evaluation needs at least two pairs");
  const auto ea = embed_texts(model, a, MaskKind::kBidirectional, dim);
  const auto eb = embed_texts(model, b, MaskKind::kBidirectional, dim);
  std::vector<double> cos(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    cos[i] = std::inner_product(ea[i].begin(), ea[i].end(), eb[i].begin(), 0.0);
  return spearman(cos, labels);
}

double contrastive_loss(const Model& model, const std::vector<TrainingExample>& pairs, MaskKind mask,
                        double temperature) {
  std::vector<std::string> q, p;
  for (const auto& e : pairs) {
    q.push_back(e.query());
    p.push_back(e.positive());
  }
  MaskCache masks(mask, mask == MaskKind::kSoft ? std::optional(ScheduleState{}) : std::nullopt);
  const Tensor eq = embed(model, model.encoder.parameters(), q, masks);
  const Tensor ep = embed(model, model.encoder.parameters(), p, masks);
  return info_nce(ContrastiveBatch{eq, ep, Tensor(), 0, temperature}).loss.item();
}

// ---------------------------------------------------------------------------
// Stage execution

StageResult run_stage(const StageConfig& cfg, Model& model, const StageInputs& inputs, StageProgress& progress,
                      const StageHooks& hooks) {
  cfg.validate();
  StageResult result;
  result.kind = cfg.kind;
  const std::uint64_t stage_seed =
      cfg.seed ? *cfg.seed : Rng::derive({hooks.run_seed, 0x57a9e, hooks.stage_index}).next();
  const auto& ecfg = model.encoder.config();
  {
    // Keep any restored moments; the hyperparameters always come from cfg.
    AdamW opt(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
    opt.restore(progress.optimizer.steps_taken(), progress.optimizer.first_moments(),
                progress.optimizer.second_moments());
    progress.optimizer = std::move(opt);
  }

  // Stage-specific data preparation (deterministic, so it is redone on resume).
  std::vector<LmSequence> lm;
  std::vector<TextPair> pairs;
  std::vector<TaskStream> streams;
  std::vector<std::size_t> order;
  if (cfg.kind == StageKind::kLmPretrain || cfg.kind == StageKind::kPairSft) {
    if (!inputs.data) throw DataError("stage has no data");
    lm = lm_sequences(cfg, model, *inputs.data);
  } else if (cfg.kind == StageKind::kWeakContrastive) {
    if (!inputs.data) throw DataError("stage has no data");
    pairs = contrastive_pairs(cfg, *inputs.data, result.pairs_filtered);
    if (pairs.size() < 2) throw DataError("weak-contrastive stage needs at least two pairs after filtering");
  } else {
    if (inputs.tasks.size() != cfg.tasks.size()) throw DataError("one dataset per supervised task required");
    for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
      if (!inputs.tasks[i]) throw DataError("missing dataset for task " + std::to_string(i));
      streams.push_back(make_stream(cfg, cfg.tasks[i], inputs.tasks[i]));
    }
    order = task_order(streams);
    for (std::size_t i = 0; i < streams.size(); ++i) {
      auto& s = streams[i];
      if (s.source != NegativeSource::kMined) continue;
      const std::string key = "task" + std::to_string(i);
      if (!progress.miners_ready) {
        progress.miners[key] = build_miner(model, cfg, s);
      } else {
        s.k = progress.miners.at(key).negatives_per_query();
        if (s.k == 0) s.source = NegativeSource::kNone;
      }
    }
    progress.miners_ready = true;
  }

  auto evaluate = [&](long step) {
    if (!inputs.eval) return false;
    const auto scores = evaluate_retrieval(model, *inputs.eval);
    result.recall_at_1 = scores.recall_at_1;
    for (const auto& [metric, value] : {std::pair{"recall@1", scores.recall_at_1},
                                        std::pair{"recall@10", scores.recall_at_10},
                                        std::pair{"ndcg@10", scores.ndcg_at_10}}) {
      write_json(hooks.metrics, Json{{"stage", hooks.stage_index},
                                     {"step", step},
                                     {"metric", metric},
                                     {"split", "eval"},
                                     {"value", value}});
    }
    if (hooks.log) {
      *hooks.log << "  eval step " << step << ": recall@1 " << scores.recall_at_1 << ", ndcg@10 "
                 << scores.ndcg_at_10 << '\n';
    }
    return cfg.early_stop_recall1 && scores.recall_at_1 >= *cfg.early_stop_recall1;
  };

  long last_eval = -1;
  for (long step = progress.next_step; step < cfg.steps; ++step) {
    if (hooks.stop_at_step && step == *hooks.stop_at_step) {
      result.interrupted = true;
      return result;
    }
    Rng rng = Rng::derive({stage_seed, static_cast<std::uint64_t>(step)});
    Tape tape;
    const ParameterMap tracked = watch_all(tape, model.encoder.parameters());
    Tensor loss;
    Json rec{{"stage", hooks.stage_index}, {"step", step}};
    std::vector<MiningRecord> mined;

    if (cfg.kind == StageKind::kLmPretrain || cfg.kind == StageKind::kPairSft) {
      MaskCache masks(MaskKind::kCausal, std::nullopt);
      std::vector<std::vector<int>> inputs_seq;
      std::vector<int> targets;
      std::vector<std::size_t> rows;
      std::size_t offset = 0;
      for (auto i : sample_indices(lm.size(), cfg.batch_size, rng)) {
        const auto& s = lm[i];
        inputs_seq.emplace_back(s.tokens.begin(), s.tokens.end() - 1);
        for (std::size_t p = s.first_target; p + 1 < s.tokens.size(); ++p) {
          rows.push_back(offset + p);
          targets.push_back(s.tokens[p + 1]);
        }
        offset += s.tokens.size() - 1;
      }
      const PackedBatch batch = PackedBatch::pack(inputs_seq);
      std::vector<AttentionMask> ms;
      for (const auto& s : inputs_seq) ms.push_back(masks.get(s.size()));
      const Tensor states = model.encoder.forward(tracked, batch, ms);
      const Tensor logits = model.encoder.lm_logits(tracked, select_rows(states, rows));
      loss = next_token_ce(logits, targets);
      rec["task"] = cfg.kind == StageKind::kLmPretrain ? "text" : "sft";
    } else if (cfg.kind == StageKind::kWeakContrastive) {
      const ScheduleState sched{cfg.mask.schedule, step, std::max(1L, cfg.steps - 1)};
      MaskCache masks(cfg.mask.kind, sched);
      std::vector<std::string> q, p;
      for (auto i : sample_indices(pairs.size(), cfg.batch_size, rng)) {
        q.push_back(pairs[i].query);
        p.push_back(pairs[i].positive);
      }
      const Tensor eq = embed(model, tracked, q, masks);
      const Tensor ep = embed(model, tracked, p, masks);
      loss = info_nce(ContrastiveBatch{eq, ep, Tensor(), 0, cfg.temperature}).loss;
      rec["task"] = "pairs";
      if (cfg.mask.kind == MaskKind::kSoft) rec["alpha"] = schedule_alpha(sched);
    } else {
      // Swaps flagged on the previous step happen at this step boundary.
      for (auto& [key, miner] : progress.miners) {
        if (step == 0) continue;
        const auto report = miner.replace_all();
        result.replacements += report.replaced.size();
        result.exhausted += report.exhausted;
      }
      const std::size_t ti = order[static_cast<std::size_t>(step) % order.size()];
      auto& s = streams[ti];
      MaskCache masks(MaskKind::kBidirectional, std::nullopt);
      const auto idx = sample_indices(s.ds->examples.size(), s.batch, rng);
      const std::size_t scored_dims = cfg.mrl ? ecfg.mrl_dims.size() : 1;
      std::vector<Tensor> parts;
      if (s.mix.task == TaskKind::kSts) {
        std::vector<std::string> a, b;
        std::vector<double> labels;
        for (auto i : idx) {
          const auto& sp = std::get<ScoredPair>(s.ds->examples[i].body);
          a.push_back(sp.a);
          b.push_back(sp.b);
          labels.push_back(sp.label);
        }
        const Tensor ea = embed(model, tracked, a, masks);
        const Tensor eb = embed(model, tracked, b, masks);
        for (std::size_t di = 0; di < scored_dims; ++di) {
          const std::size_t d = cfg.mrl ? ecfg.mrl_dims[di] : ecfg.hidden_dim;
          parts.push_back(cosent(StsBatch{row_dots(prefix(ea, d), prefix(eb, d), 1), labels, cfg.cosent_tau}));
        }
      } else {
        std::vector<std::string> q, p, n;
        const std::string key = "task" + std::to_string(ti);
        for (auto i : idx) {
          const auto& e = s.ds->examples[i];
          q.push_back(e.query());
          p.push_back(e.positive());
          if (s.source == NegativeSource::kExplicit) {
            const auto& negs = *explicit_negatives(e);
            n.insert(n.end(), negs.begin(), negs.begin() + static_cast<std::ptrdiff_t>(s.k));
          } else if (s.source == NegativeSource::kMined) {
            for (auto id : progress.miners.at(key).negatives(i)) n.push_back(s.corpus[id]);
          }
        }
        const Tensor eq = embed(model, tracked, q, masks);
        const Tensor ep = embed(model, tracked, p, masks);
        const Tensor en = n.empty() ? Tensor() : embed(model, tracked, n, masks);
        const std::size_t k = s.source == NegativeSource::kNone ? 0 : s.k;
        std::vector<double> full_scores;
        for (std::size_t di = 0; di < scored_dims; ++di) {
          const std::size_t d = cfg.mrl ? ecfg.mrl_dims[di] : ecfg.hidden_dim;
          auto r = info_nce(ContrastiveBatch{prefix(eq, d), prefix(ep, d), k ? prefix(en, d) : Tensor(), k,
                                             cfg.temperature});
          // The miner sees the widest embedding's scores.
          if (di + 1 == scored_dims) full_scores = r.negative_scores;
          parts.push_back(r.loss);
        }
        if (s.live_mining) {
          auto& miner = progress.miners.at(key);
          for (std::size_t b = 0; b < idx.size(); ++b) {
            auto recs = miner.cache(idx[b], std::span(full_scores).subspan(b * k, k), step);
            mined.insert(mined.end(), recs.begin(), recs.end());
          }
        }
      }
      Tensor total = parts.size() == 1 ? parts[0] : scale(sum(concat(parts)), 1.0 / static_cast<double>(parts.size()));
      loss = scale(total, s.mix.weight);
      rec["task"] = std::string(to_string(s.mix.task));
    }

    const double value = loss.item();
    if (!std::isfinite(value)) throw NumericalError("non-finite loss at step " + std::to_string(step), step);
    tape.backward(loss);
    auto grads = collect_grads(tape, tracked);
    const double gnorm = gradient_norm(grads);
    if (!std::isfinite(gnorm)) throw NumericalError("non-finite gradient at step " + std::to_string(step), step);
    if (cfg.grad_clip > 0.0 && gnorm > cfg.grad_clip) {
      const double f = cfg.grad_clip / gnorm;
      for (auto& [name, g] : grads)
        for (auto& x : g) x *= f;
    }
    const double lr = learning_rate(cfg, step);
    progress.optimizer.step(model.encoder.mutable_parameters(), grads, lr, step);
    progress.next_step = step + 1;
    ++result.steps_run;
    result.final_loss = value;

    rec["loss"] = value;
    rec["lr"] = lr;
    rec["grad_norm"] = gnorm;
    write_json(hooks.metrics, rec);
    if (hooks.mining_log && !mined.empty()) {
      for (const auto& m : mined) {
        write_json(hooks.mining_log, Json{{"stage", hooks.stage_index},
                                          {"step", m.step},
                                          {"query_id", m.query_id},
                                          {"slot", m.slot},
                                          {"negative_id", m.negative_id},
                                          {"s0", m.s0},
                                          {"s_cur", m.s_cur},
                                          {"decision", std::string(to_string(m.decision))}});
      }
    }
    if (hooks.log && (step % 50 == 0 || step + 1 == cfg.steps)) {
      *hooks.log << "  " << to_string(cfg.kind) << " step " << step << " loss " << value << '\n';
    }
    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
      last_eval = step;
      if (evaluate(step)) {
        result.early_stopped = true;
        progress.next_step = cfg.steps;
        return result;
      }
    }
  }
  if (inputs.eval && last_eval != cfg.steps - 1 && result.steps_run > 0) {
    evaluate(cfg.steps - 1);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Whole runs

namespace {

const Dataset& synth_part(const SynthCorpus& c, TaskKind t) {
  switch (t) {
    case TaskKind::kText: return c.text;
    case TaskKind::kSft: return c.sft;
    case TaskKind::kRetrieval: return c.retrieval;
    case TaskKind::kClassification: return c.classification;
    case TaskKind::kSts: return c.sts;
    case TaskKind::kEval: return c.eval;
    default: throw ConfigError("no synthetic dataset for task '" + std::string(to_string(t)) + "'");
  }
}

class DataStore {
 public:
  explicit DataStore(const RunManifest& m) : manifest_(m) {
    if (m.synthetic) synth_ = synth_corpus(*m.synthetic);
  }
  const Dataset& get(const std::string& ref) {
    auto it = cache_.find(ref);
    if (it != cache_.end()) return it->second;
    Dataset ds;
    if (ref.rfind("synth:", 0) == 0) {
      ds = synth_part(*synth_, parse_task_kind(ref.substr(6)));
    } else {
      const auto path = manifest_.resolve(ref);
      if (!std::filesystem::exists(path)) throw DataError("dataset '" + path.string() + "' does not exist");
      ds = read_dataset(path);
    }
    return cache_.emplace(ref, std::move(ds)).first->second;
  }
  const std::optional<SynthCorpus>& synth() const { return synth_; }

 private:
  const RunManifest& manifest_;
  std::optional<SynthCorpus> synth_;
  std::map<std::string, Dataset> cache_;
};

/// Keeps records written before (stage, step) and drops the rest.
void truncate_log(const std::filesystem::path& path, std::size_t stage, long step) {
  if (!std::filesystem::exists(path)) return;
  std::ifstream is(path);
  std::string kept, line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = Json::parse(line);
    const auto s = j.at("stage").get<std::size_t>();
    const auto t = j.at("step").get<long>();
    if (s < stage || (s == stage && t < step)) kept += line + "\n";
  }
  is.close();
  std::ofstream os(path, std::ios::trunc);
  os << kept;
}

std::string state_json(std::size_t stage, long next_step, bool complete, const StageProgress* progress) {
  Json j{{"stage", stage}, {"next_step", next_step}, {"complete", complete}};
  if (progress) {
    j["optimizer_steps"] = progress->optimizer.steps_taken();
    j["miners_ready"] = progress->miners_ready;
    Json miners = Json::object();
    for (const auto& [k, m] : progress->miners) miners[k] = Json::parse(m.to_json());
    j["miners"] = miners;
  }
  return j.dump();
}

}  // namespace

RunResult run_manifest(const RunManifest& manifest, const TrainOptions& options) {
  manifest.validate();
  const auto out = manifest.output_dir;
  std::filesystem::create_directories(out);
  DataStore data(manifest);

  if (data.synth()) {
    std::filesystem::create_directories(out / "data");
    const auto& c = *data.synth();
    for (const Dataset* d : {&c.text, &c.sft, &c.retrieval, &c.classification, &c.sts, &c.eval})
      write_dataset(out / "data" / (std::string(to_string(d->task)) + ".jsonl"), *d);
  }

  // Model: resume checkpoint, init checkpoint, or fresh.
  std::optional<Model> model;
  std::size_t first_stage = 0;
  StageProgress progress;
  bool resuming = false;
  const auto resume_path = out / "resume.ckpt";
  if (options.resume) {
    if (!std::filesystem::exists(resume_path)) {
      throw CheckpointError("no resume checkpoint at '" + resume_path.string() + "'");
    }
    auto ck = load_checkpoint(resume_path, &manifest.encoder);
    const auto st = Json::parse(ck.state);
    first_stage = st.at("stage").get<std::size_t>();
    progress.next_step = st.at("next_step").get<long>();
    progress.miners_ready = st.value("miners_ready", false);
    for (const auto& [k, v] : st.at("miners").items()) progress.miners[k] = NegativeMiner::from_json(v.dump());
    model.emplace(Model{Encoder(ck.config, std::move(ck.params)), std::move(ck.tokenizer)});
    AdamW opt;
    opt.restore(st.at("optimizer_steps").get<long>(), ck.optimizer.first_moments(), ck.optimizer.second_moments());
    progress.optimizer = std::move(opt);
    resuming = true;
    truncate_log(out / "metrics.jsonl", first_stage, progress.next_step);
    truncate_log(out / "mining.jsonl", first_stage, progress.next_step);
  } else {
    std::filesystem::remove(out / "metrics.jsonl");
    std::filesystem::remove(out / "mining.jsonl");
    std::filesystem::remove(resume_path);
    if (!manifest.init_checkpoint.empty()) {
      auto ck = load_checkpoint(manifest.resolve(manifest.init_checkpoint), &manifest.encoder);
      model.emplace(Model{Encoder(ck.config, std::move(ck.params)), std::move(ck.tokenizer)});
    } else {
      std::vector<std::string> texts;
      std::vector<std::string> refs;
      for (const auto& s : manifest.stages) {
        if (!s.data.empty()) refs.push_back(s.data);
        for (const auto& t : s.tasks) refs.push_back(t.data);
      }
      for (const auto& r : refs) {
        auto strs = dataset_strings(data.get(r));
        texts.insert(texts.end(), strs.begin(), strs.end());
      }
      model.emplace(make_model(manifest.encoder, texts, Rng::derive({manifest.seed, 0xE4C0DE}).next()));
    }
  }

  std::ofstream metrics(out / "metrics.jsonl", std::ios::app);
  std::ofstream mining(out / "mining.jsonl", std::ios::app);
  RunResult result;
  long offset = 0;
  for (std::size_t i = 0; i < first_stage; ++i) offset += manifest.stages[i].steps;

  for (std::size_t i = first_stage; i < manifest.stages.size(); ++i) {
    const auto& cfg = manifest.stages[i];
    if (!(resuming && i == first_stage)) progress = StageProgress{};
    StageInputs in;
    if (!cfg.data.empty()) in.data = &data.get(cfg.data);
    for (const auto& t : cfg.tasks) in.tasks.push_back(&data.get(t.data));
    if (!cfg.eval_data.empty()) in.eval = &data.get(cfg.eval_data);
    StageHooks hooks;
    hooks.stage_index = i;
    hooks.run_seed = manifest.seed;
    hooks.metrics = &metrics;
    hooks.mining_log = &mining;
    hooks.log = options.log;
    if (options.stop_after && *options.stop_after >= offset && *options.stop_after < offset + cfg.steps) {
      hooks.stop_at_step = *options.stop_after - offset;
    }
    if (options.log) *options.log << "stage " << i + 1 << " (" << to_string(cfg.kind) << ")\n";
    StageResult r = run_stage(cfg, *model, in, progress, hooks);
    metrics.flush();
    mining.flush();
    result.stages.push_back(r);
    const std::string name = "stage" + std::to_string(i + 1) + "-" + std::string(to_string(cfg.kind)) + ".ckpt";
    Checkpoint ck{model->encoder.config(), model->tokenizer, model->encoder.parameters(), progress.optimizer, ""};
    if (r.interrupted) {
      ck.state = state_json(i, progress.next_step, false, &progress);
      save_checkpoint(resume_path, ck);
      result.interrupted = true;
      return result;
    }
    ck.state = state_json(i, cfg.steps, true, nullptr);
    save_checkpoint(out / name, ck);
    result.final_checkpoint = out / name;
    offset += cfg.steps;
  }
  std::filesystem::copy_file(result.final_checkpoint, out / "final.ckpt",
                             std::filesystem::copy_options::overwrite_existing);
  result.final_checkpoint = out / "final.ckpt";
  std::filesystem::remove(resume_path);
  return result;
}

}  // namespace softembed
