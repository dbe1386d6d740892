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

#include "softembed/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_map>

#include "softembed/errors.hpp"

namespace softembed {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& texts, std::size_t vocab_size) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& t : texts)
    for (auto& w : split_words(t)) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> words;
  for (auto& [w, c] : ranked) words.push_back(w);
  return from_words(std::move(words), vocab_size);
}

Tokenizer Tokenizer::from_words(std::vector<std::string> words, std::size_t vocab_size) {
  if (vocab_size < static_cast<std::size_t>(kFirstWord)) {
    throw ConfigError("vocab_size must be at least " + std::to_string(kFirstWord));
  }
  const std::size_t slots = vocab_size - kFirstWord;
  if (words.size() > slots) words.resize(slots);
  Tokenizer tok;
  tok.vocab_size_ = vocab_size;
  tok.words_ = std::move(words);
  for (std::size_t i = 0; i < tok.words_.size(); ++i) {
    tok.index_.emplace(tok.words_[i], kFirstWord + static_cast<int>(i));
  }
  return tok;
}

std::vector<int> Tokenizer::encode(std::string_view text, std::size_t max_len) const {
  if (max_len == 0) throw ConfigError("max_len must be positive");
  std::vector<int> ids;
  for (const auto& w : split_words(text)) {
    if (auto it = index_.find(w); it != index_.end()) {
      ids.push_back(it->second);
    } else {
      for (unsigned char c : w) ids.push_back(kFirstByte + c);
    }
  }
  if (ids.size() > max_len - 1) ids.resize(max_len - 1);
  ids.push_back(kEos);
  return ids;
}

}  // namespace softembed
