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
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "softembed/rng.hpp"

namespace softembed {

enum class TaskKind { kText, kSft, kPairs, kRetrieval, kClr, kClassification, kSts, kEval };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

/// Instruction-tuning record (instruction, input, output).
struct RawRecord {
  std::string instruction;
  std::string input;
  std::string output;
  std::string source;
};

struct Pair {
  std::string query;
  std::string positive;
};

struct Triplet {
  std::string query;
  std::string positive;
  std::vector<std::string> negatives;
};

struct ScoredPair {
  std::string a;
  std::string b;
  double label = 0.0;
};

struct TrainingExample {
  TaskKind task = TaskKind::kPairs;
  std::variant<Pair, Triplet, ScoredPair> body;
  std::string query_lang;
  std::string passage_lang;
  /// Semantic group (cluster id) when known; -1 otherwise.
  long group = -1;
  std::string source;

  const std::string& query() const;
  const std::string& positive() const;
};

/// One dataset file: a header record followed by one record per line.
struct Dataset {
  TaskKind task = TaskKind::kPairs;
  std::vector<std::string> languages;
  std::vector<std::string> texts;
  std::vector<RawRecord> records;
  std::vector<TrainingExample> examples;
};

void write_dataset(std::ostream& os, const Dataset& ds);
void write_dataset(const std::filesystem::path& path, const Dataset& ds);
/// Throws DataError with the offending line number on malformed input.
Dataset read_dataset(std::istream& is);
Dataset read_dataset(const std::filesystem::path& path);

/// Query = instruction + "\n" + input (either part may be empty); positive =
/// output. Throws DataError on an empty output.
TrainingExample pair_from_sft(const RawRecord& r);

class ScorerClient {
 public:
  virtual ~ScorerClient() = default;
  /// Relevance of `passage` to `query` in [0, 1].
  virtual double score(const std::string& query, const std::string& passage) = 0;
};

/// Word-overlap (Jaccard) scorer.
class OverlapScorer : public ScorerClient {
 public:
  double score(const std::string& query, const std::string& passage) override;
};

class FunctionScorer : public ScorerClient {
 public:
  explicit FunctionScorer(std::function<double(const std::string&, const std::string&)> fn)
      : fn_(std::move(fn)) {}
  double score(const std::string& q, const std::string& p) override { return fn_(q, p); }

 private:
  std::function<double(const std::string&, const std::string&)> fn_;
};

struct FilterReport {
  std::size_t kept = 0;
  std::map<std::string, std::size_t> dropped_by_source;
  std::vector<std::string> failures;
};

inline constexpr double kDefaultQualityThreshold = 0.4;

/// Keeps pairs whose score is >= threshold, preserving input order. A record
/// whose scoring throws is dropped and logged in the report.
std::vector<TrainingExample> quality_filter(const std::vector<TrainingExample>& pairs,
                                            ScorerClient& scorer, double threshold,
                                            FilterReport* report = nullptr);

/// Categorical distribution over language codes.
class LanguageDistribution {
 public:
  /// Throws ConfigError unless proportions are >= 0, codes unique, and the
  /// proportions sum to 1 within 1e-9.
  static LanguageDistribution make(std::vector<std::pair<std::string, double>> entries);
  /// Rescales non-negative weights to sum to 1.
  static LanguageDistribution from_weights(std::vector<std::pair<std::string, double>> entries);
  /// Parses a YAML document with a `languages:` list of {code, proportion}.
  static LanguageDistribution load(const std::filesystem::path& path, bool normalize = false);

  const std::vector<std::pair<std::string, double>>& entries() const { return entries_; }
  double proportion(std::string_view code) const;

 private:
  friend std::string sample_target_language(const LanguageDistribution&, Rng&);
  std::vector<std::pair<std::string, double>> entries_;
  std::vector<double> cumulative_;
};

/// Percentages of the 26-language translation mix used for cross-lingual
/// query generation. They add up to 106, so use with from_weights.
std::vector<std::pair<std::string, double>> translation_language_weights();

std::string sample_target_language(const LanguageDistribution& dist, Rng& rng);

class TranslatorClient {
 public:
  virtual ~TranslatorClient() = default;
  virtual std::string translate(const std::string& text, const std::string& target_lang) = 0;
};

/// Offline translator: prefixes "[<lang>] " and rewrites every word into the
/// target language's surface form (see surface_form). Invertible.
class MockTranslator : public TranslatorClient {
 public:
  std::string translate(const std::string& text, const std::string& target_lang) override;
};

/// Runs `<command> <target_lang>` with the text on stdin and takes stdout
/// (trailing newline stripped) as the translation. Non-zero exit throws.
class CommandTranslator : public TranslatorClient {
 public:
  explicit CommandTranslator(std::string command) : command_(std::move(command)) {}
  std::string translate(const std::string& text, const std::string& target_lang) override;

 private:
  std::string command_;
};

/// Language-specific spelling of a base word: "<base>_<lang>".
std::string surface_form(std::string_view base, std::string_view lang);
/// Inverse of surface_form; returns the word unchanged if it has no suffix.
std::string base_form(std::string_view word);

/// Translates only the query; passage bytes are untouched. Target equal to
/// the query's language leaves the text as is. The result is tagged kClr.
TrainingExample make_clr_pair(const TrainingExample& pair, TranslatorClient& translator,
                              const std::string& target_lang);

struct ClrReport {
  std::size_t emitted = 0;
  std::vector<std::string> failures;
};

/// One CLR example per input (minus translator failures), in input order,
/// with target languages drawn from `dist` using `seed`.
std::vector<TrainingExample> make_clr_dataset(const std::vector<TrainingExample>& pairs,
                                              TranslatorClient& translator,
                                              const LanguageDistribution& dist, std::uint64_t seed,
                                              ClrReport* report = nullptr);

struct SynthConfig {
  std::size_t clusters = 64;
  std::size_t per_cluster = 16;
  std::vector<std::string> languages{"en"};
  std::uint64_t seed = 1;
  std::size_t topic_words = 3;
  std::size_t topic_slots = 3;
  std::size_t noise_words = 16;
  std::size_t noise_slots = 3;
  /// Held-out queries per cluster in the eval split.
  std::size_t eval_queries = 4;
  std::size_t label_negatives = 7;
};

/// Separable token clusters rendered in every configured language.
struct SynthCorpus {
  Dataset text;            ///< all training sentences, every language
  Dataset sft;             ///< instruction records from same-cluster sentence pairs
  Dataset retrieval;       ///< same-language (query, positive) triplets, negatives mined later
  Dataset classification;  ///< (text, label text, other label texts)
  Dataset sts;             ///< graded sentence pairs, label = shared topic words
  Dataset eval;            ///< held-out queries against one passage per cluster
  std::vector<std::string> cluster_labels;
};

/// Throws ConfigError for fewer than two clusters.
SynthCorpus synth_corpus(const SynthConfig& cfg);

}  // namespace softembed
