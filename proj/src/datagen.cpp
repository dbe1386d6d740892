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

#include "softembed/datagen.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "json.hpp"
#include "softembed/errors.hpp"
#include "softembed/tokenizer.hpp"

namespace softembed {

using nlohmann::json;

namespace {

constexpr std::string_view kTaskNames[] = {"text",      "sft", "pairs", "retrieval",
                                           "clr",       "classification", "sts", "eval"};

}  // namespace

std::string_view to_string(TaskKind kind) { return kTaskNames[static_cast<int>(kind)]; }

TaskKind parse_task_kind(std::string_view name) {
  for (int i = 0; i < 8; ++i)
    if (kTaskNames[i] == name) return static_cast<TaskKind>(i);
  throw DataError("unknown task kind '" + std::string(name) + "'");
}

const std::string& TrainingExample::query() const {
  if (auto* p = std::get_if<Pair>(&body)) return p->query;
  if (auto* t = std::get_if<Triplet>(&body)) return t->query;
  return std::get<ScoredPair>(body).a;
}

const std::string& TrainingExample::positive() const {
  if (auto* p = std::get_if<Pair>(&body)) return p->positive;
  if (auto* t = std::get_if<Triplet>(&body)) return t->positive;
  return std::get<ScoredPair>(body).b;
}

// ---------------------------------------------------------------------------
// Dataset files

namespace {

json example_to_json(const TrainingExample& e) {
  json j;
  if (auto* p = std::get_if<Pair>(&e.body)) {
    j["kind"] = "pair";
    j["query"] = p->query;
    j["positive"] = p->positive;
  } else if (auto* t = std::get_if<Triplet>(&e.body)) {
    j["kind"] = "triplet";
    j["query"] = t->query;
    j["positive"] = t->positive;
    j["negatives"] = t->negatives;
  } else {
    const auto& s = std::get<ScoredPair>(e.body);
    j["kind"] = "scored";
    j["a"] = s.a;
    j["b"] = s.b;
    j["label"] = s.label;
  }
  j["task"] = std::string(to_string(e.task));
  if (!e.query_lang.empty()) j["query_lang"] = e.query_lang;
  if (!e.passage_lang.empty()) j["passage_lang"] = e.passage_lang;
  if (e.group >= 0) j["group"] = e.group;
  if (!e.source.empty()) j["source"] = e.source;
  return j;
}

TrainingExample example_from_json(const json& j, TaskKind file_task) {
  TrainingExample e;
  e.task = j.contains("task") ? parse_task_kind(j["task"].get<std::string>()) : file_task;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "pair") {
    e.body = Pair{j.at("query").get<std::string>(), j.at("positive").get<std::string>()};
  } else if (kind == "triplet") {
    Triplet t{j.at("query").get<std::string>(), j.at("positive").get<std::string>(), {}};
    if (j.contains("negatives")) t.negatives = j["negatives"].get<std::vector<std::string>>();
    e.body = std::move(t);
  } else if (kind == "scored") {
    e.body = ScoredPair{j.at("a").get<std::string>(), j.at("b").get<std::string>(),
                        j.at("label").get<double>()};
  } else {
    throw DataError("unknown record kind '" + kind + "'");
  }
  e.query_lang = j.value("query_lang", std::string{});
  e.passage_lang = j.value("passage_lang", std::string{});
  e.group = j.value("group", -1L);
  e.source = j.value("source", std::string{});
  return e;
}

}  // namespace

void write_dataset(std::ostream& os, const Dataset& ds) {
  json header{{"header",
               {{"format", "softembed-dataset"},
                {"version", 1},
                {"task", std::string(to_string(ds.task))},
                {"languages", ds.languages}}}};
  os << header.dump() << '\n';
  for (const auto& t : ds.texts) os << json{{"kind", "text"}, {"text", t}}.dump() << '\n';
  for (const auto& r : ds.records) {
    json j{{"kind", "sft"}, {"instruction", r.instruction}, {"input", r.input}, {"output", r.output}};
    if (!r.source.empty()) j["source"] = r.source;
    os << j.dump() << '\n';
  }
  for (const auto& e : ds.examples) os << example_to_json(e).dump() << '\n';
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write dataset '" + path.string() + "'");
  write_dataset(os, ds);
}

Dataset read_dataset(std::istream& is) {
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (!have_header) {
        const auto& h = j.at("header");
        if (h.at("format").get<std::string>() != "softembed-dataset") throw DataError("bad format tag");
        ds.task = parse_task_kind(h.at("task").get<std::string>());
        ds.languages = h.value("languages", std::vector<std::string>{});
        have_header = true;
        continue;
      }
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "text") {
        ds.texts.push_back(j.at("text").get<std::string>());
      } else if (kind == "sft") {
        ds.records.push_back(RawRecord{j.value("instruction", std::string{}), j.value("input", std::string{}),
                                       j.at("output").get<std::string>(), j.value("source", std::string{})});
      } else {
        ds.examples.push_back(example_from_json(j, ds.task));
      }
    } catch (const DataError& e) {
      throw DataError("dataset line " + std::to_string(lineno) + ": " + e.what());
    } catch (const json::exception& e) {
      throw DataError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw DataError("dataset has no header record");
  return ds;
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open dataset '" + path.string() + "'");
  return read_dataset(is);
}

// ---------------------------------------------------------------------------
// SFT conversion and filtering

TrainingExample pair_from_sft(const RawRecord& r) {
  if (r.output.empty()) throw DataError("SFT record has an empty output");
  std::string query;
  if (r.instruction.empty()) query = r.input;
  else if (r.input.empty()) query = r.instruction;
  else query = r.instruction + "\n" + r.input;
  TrainingExample e;
  e.task = TaskKind::kPairs;
  e.body = Pair{std::move(query), r.output};
  e.source = r.source;
  return e;
}

double OverlapScorer::score(const std::string& query, const std::string& passage) {
  const auto qw = split_words(query), pw = split_words(passage);
  const std::set<std::string> a(qw.begin(), qw.end()), b(pw.begin(), pw.end());
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& w : a) inter += b.count(w);
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

std::vector<TrainingExample> quality_filter(const std::vector<TrainingExample>& pairs,
                                            ScorerClient& scorer, double threshold,
                                            FilterReport* report) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError("quality threshold must lie in [0, 1]");
  }
  FilterReport local;
  FilterReport& rep = report ? *report : local;
  std::vector<TrainingExample> kept;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    double s = 0.0;
    try {
      s = scorer.score(p.query(), p.positive());
    } catch (const std::exception& e) {
      rep.failures.push_back("record " + std::to_string(i) + ": " + e.what());
      ++rep.dropped_by_source[p.source];
      continue;
    }
    if (s >= threshold) {
      kept.push_back(p);
      ++rep.kept;
    } else {
      ++rep.dropped_by_source[p.source];
    }
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Language distribution

LanguageDistribution LanguageDistribution::make(std::vector<std::pair<std::string, double>> entries) {
  if (entries.empty()) throw ConfigError("language distribution is empty");
  std::set<std::string> seen;
  double total = 0.0;
  for (const auto& [code, p] : entries) {
    if (!seen.insert(code).second) throw ConfigError("duplicate language code '" + code + "'");
    if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError("negative proportion for '" + code + "'");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("language proportions sum to " + std::to_string(total) + ", expected 1");
  }
  LanguageDistribution d;
  d.entries_ = std::move(entries);
  double c = 0.0;
  for (const auto& e : d.entries_) d.cumulative_.push_back(c += e.second);
  return d;
}

LanguageDistribution LanguageDistribution::from_weights(std::vector<std::pair<std::string, double>> entries) {
  double total = 0.0;
  for (const auto& e : entries) {
    if (!(e.second >= 0.0)) throw ConfigError("negative weight for '" + e.first + "'");
    total += e.second;
  }
  if (!(total > 0.0)) throw ConfigError("language weights sum to zero");
  for (auto& e : entries) e.second /= total;
  // Absorb rounding so the strict constructor accepts the result.
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < entries.size(); ++i) s += entries[i].second;
  if (!entries.empty()) entries.back().second = 1.0 - s;
  return make(std::move(entries));
}

LanguageDistribution LanguageDistribution::load(const std::filesystem::path& path, bool normalize) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::BadFile&) {
    throw ConfigError("cannot read distribution file '" + path.string() + "'");
  } catch (const YAML::Exception& e) {
    throw ConfigError("distribution file '" + path.string() + "': " + e.what());
  }
  const auto langs = root["languages"];
  if (!langs || !langs.IsSequence()) throw ConfigError("distribution file needs a 'languages' list");
  std::vector<std::pair<std::string, double>> entries;
  for (const auto& n : langs) {
    entries.emplace_back(n["code"].as<std::string>(), n["proportion"].as<double>());
  }
  return normalize ? from_weights(std::move(entries)) : make(std::move(entries));
}

double LanguageDistribution::proportion(std::string_view code) const {
  for (const auto& [c, p] : entries_)
    if (c == code) return p;
  return 0.0;
}

std::vector<std::pair<std::string, double>> translation_language_weights() {
  return {{"en", 25}, {"zh", 12}, {"es", 8}, {"fr", 6}, {"ja", 6}, {"de", 5}, {"ru", 5},
          {"it", 4},  {"pt", 4},  {"ar", 3}, {"ko", 3}, {"bn", 2}, {"da", 2}, {"sv", 2},
          {"th", 2},  {"ms", 2},  {"tr", 2}, {"vi", 2}, {"nl", 2}, {"pl", 2}, {"hi", 2},
          {"km", 1},  {"fi", 1},  {"he", 1}, {"hu", 1}, {"no", 1}};
}

std::string sample_target_language(const LanguageDistribution& dist, Rng& rng) {
  return dist.entries_[rng.categorical(dist.cumulative_)].first;
}

// ---------------------------------------------------------------------------
// Translation

std::string surface_form(std::string_view base, std::string_view lang) {
  return std::string(base) + "_" + std::string(lang);
}

std::string base_form(std::string_view word) {
  const auto us = word.rfind('_');
  if (us == std::string_view::npos || us == 0) return std::string(word);
  return std::string(word.substr(0, us));
}

std::string MockTranslator::translate(const std::string& text, const std::string& target_lang) {
  std::string out = "[" + target_lang + "]";
  for (const auto& w : split_words(text)) {
    if (w.size() > 2 && w.front() == '[' && w.back() == ']') continue;  // earlier language tag
    out += ' ';
    out += surface_form(base_form(w), target_lang);
  }
  return out;
}

std::string CommandTranslator::translate(const std::string& text, const std::string& target_lang) {
  char tmpl[] = "/tmp/softembed-translate-XXXXXX";
  const int fd = mkstemp(tmpl);
  if (fd < 0) throw std::runtime_error("translator: cannot create temporary file");
  {
    std::ofstream tmp(tmpl, std::ios::binary);
    tmp << text;
  }
  ::close(fd);
  const std::string cmd = command_ + " '" + target_lang + "' < '" + tmpl + "'";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) {
    std::remove(tmpl);
    throw std::runtime_error("translator: cannot start '" + command_ + "'");
  }
  std::string out;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
  const int status = ::pclose(pipe);
  std::remove(tmpl);
  if (status != 0) throw std::runtime_error("translator command exited with status " + std::to_string(status));
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
  return out;
}

TrainingExample make_clr_pair(const TrainingExample& pair, TranslatorClient& translator,
                              const std::string& target_lang) {
  if (pair.passage_lang.empty()) throw DataError("CLR source pair has no passage language tag");
  TrainingExample out = pair;
  out.task = TaskKind::kClr;
  const std::string& src_lang = pair.query_lang.empty() ? pair.passage_lang : pair.query_lang;
  out.query_lang = target_lang;
  if (target_lang == src_lang) return out;
  std::string translated = translator.translate(pair.query(), target_lang);
  if (auto* p = std::get_if<Pair>(&out.body)) p->query = std::move(translated);
  else if (auto* t = std::get_if<Triplet>(&out.body)) t->query = std::move(translated);
  else throw DataError("CLR generation needs a pair or triplet");
  return out;
}

std::vector<TrainingExample> make_clr_dataset(const std::vector<TrainingExample>& pairs,
                                              TranslatorClient& translator,
                                              const LanguageDistribution& dist, std::uint64_t seed,
                                              ClrReport* report) {
  ClrReport local;
  ClrReport& rep = report ? *report : local;
  Rng rng(seed);
  std::vector<TrainingExample> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::string target = sample_target_language(dist, rng);
    try {
      out.push_back(make_clr_pair(pairs[i], translator, target));
      ++rep.emitted;
    } catch (const std::exception& e) {
      rep.failures.push_back("record " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

std::vector<std::string> make_words(std::size_t count, Rng& rng, std::set<std::string>& used) {
  static constexpr char kCons[] = "bdfgklmnprstvz";
  static constexpr char kVow[] = "aeiou";
  std::vector<std::string> out;
  while (out.size() < count) {
    std::string w;
    const std::size_t syll = 2 + rng.below(2);
    for (std::size_t s = 0; s < syll; ++s) {
      w += kCons[rng.below(sizeof kCons - 1)];
      w += kVow[rng.below(sizeof kVow - 1)];
    }
    if (used.insert(w).second) out.push_back(w);
  }
  return out;
}

std::string render(const std::vector<std::string>& base, const std::string& lang) {
  std::string out;
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (i) out += ' ';
    out += surface_form(base[i], lang);
  }
  return out;
}

}  // namespace

SynthCorpus synth_corpus(const SynthConfig& cfg) {
  if (cfg.clusters < 2) throw ConfigError("synthetic corpus needs at least two clusters");
  if (cfg.languages.empty()) throw ConfigError("synthetic corpus needs at least one language");
  if (cfg.per_cluster < 2) throw ConfigError("synthetic corpus needs two sentences per cluster");
  Rng rng(cfg.seed);
  std::set<std::string> used;
  std::vector<std::vector<std::string>> topics(cfg.clusters);
  for (auto& t : topics) t = make_words(cfg.topic_words, rng, used);
  const auto noise = make_words(cfg.noise_words, rng, used);

  auto sentence = [&](std::size_t c, std::size_t topical, std::size_t other) {
    std::vector<std::string> words;
    for (std::size_t i = 0; i < cfg.topic_slots; ++i) {
      const auto& src = i < topical ? topics[c] : topics[other];
      words.push_back(src[rng.below(src.size())]);
    }
    for (std::size_t i = 0; i < cfg.noise_slots; ++i) words.push_back(noise[rng.below(noise.size())]);
    rng.shuffle(words);
    return words;
  };

  SynthCorpus out;
  out.text.task = TaskKind::kText;
  out.sft.task = TaskKind::kSft;
  out.retrieval.task = TaskKind::kRetrieval;
  out.classification.task = TaskKind::kClassification;
  out.sts.task = TaskKind::kSts;
  out.eval.task = TaskKind::kEval;
  for (Dataset* d : {&out.text, &out.sft, &out.retrieval, &out.classification, &out.sts, &out.eval})
    d->languages = cfg.languages;

  std::vector<std::vector<std::vector<std::string>>> train(cfg.clusters), held(cfg.clusters);
  for (std::size_t c = 0; c < cfg.clusters; ++c) {
    for (std::size_t i = 0; i < cfg.per_cluster; ++i) train[c].push_back(sentence(c, cfg.topic_slots, c));
    for (std::size_t i = 0; i < cfg.eval_queries + 1; ++i) held[c].push_back(sentence(c, cfg.topic_slots, c));
  }

  for (std::size_t c = 0; c < cfg.clusters; ++c) out.cluster_labels.push_back(render(topics[c], cfg.languages[0]));

  for (const auto& lang : cfg.languages) {
    std::vector<std::string> labels;
    for (std::size_t c = 0; c < cfg.clusters; ++c) labels.push_back(render(topics[c], lang));
    for (std::size_t c = 0; c < cfg.clusters; ++c) {
      const auto& sents = train[c];
      const long group = static_cast<long>(c);
      for (std::size_t i = 0; i < sents.size(); ++i) {
        const std::string q = render(sents[i], lang);
        const std::string p = render(sents[(i + 1) % sents.size()], lang);
        out.text.texts.push_back(q);
        out.sft.records.push_back(RawRecord{"match", q, p, "synthetic-" + lang});

        TrainingExample r;
        r.task = TaskKind::kRetrieval;
        r.body = Triplet{q, p, {}};
        r.query_lang = r.passage_lang = lang;
        r.group = group;
        r.source = "synthetic";
        out.retrieval.examples.push_back(r);

        std::vector<std::size_t> others;
        for (std::size_t o = 0; o < cfg.clusters; ++o)
          if (o != c) others.push_back(o);
        rng.shuffle(others);
        Triplet ct{q, labels[c], {}};
        for (std::size_t k = 0; k < std::min(cfg.label_negatives, others.size()); ++k)
          ct.negatives.push_back(labels[others[k]]);
        TrainingExample ce;
        ce.task = TaskKind::kClassification;
        ce.body = std::move(ct);
        ce.query_lang = ce.passage_lang = lang;
        ce.group = group;
        ce.source = "synthetic";
        out.classification.examples.push_back(std::move(ce));
      }
      for (std::size_t i = 0; i < sents.size() / 2; ++i) {
        const std::size_t topical = rng.below(cfg.topic_slots + 1);
        std::size_t other = rng.below(cfg.clusters - 1);
        if (other >= c) ++other;
        TrainingExample se;
        se.task = TaskKind::kSts;
        se.body = ScoredPair{render(sents[i], lang), render(sentence(c, topical, other), lang),
                             static_cast<double>(topical)};
        se.query_lang = se.passage_lang = lang;
        se.group = group;
        se.source = "synthetic";
        out.sts.examples.push_back(std::move(se));
      }
      const std::string passage = render(held[c][0], lang);
      for (std::size_t i = 1; i < held[c].size(); ++i) {
        TrainingExample ev;
        ev.task = TaskKind::kEval;
        ev.body = Pair{render(held[c][i], lang), passage};
        ev.query_lang = ev.passage_lang = lang;
        ev.group = group;
        ev.source = "synthetic";
        out.eval.examples.push_back(std::move(ev));
      }
    }
  }
  return out;
}

}  // namespace softembed
