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
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace softembed {

/// Word-level vocabulary with byte fallback. Ids 0-3 are specials, 4-259 are
/// raw bytes, and the rest are whole whitespace-delimited words.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kFirstByte = 4;
  static constexpr int kFirstWord = 260;

  Tokenizer() = default;

  /// Most frequent words (ties broken lexicographically) fill the slots above
  /// the byte range. Throws ConfigError if vocab_size < 260.
  static Tokenizer build(const std::vector<std::string>& texts, std::size_t vocab_size);
  static Tokenizer from_words(std::vector<std::string> words, std::size_t vocab_size);

  /// Encodes and appends the end-of-sequence token; keeps at most max_len ids
  /// (the last one is always kEos).
  std::vector<int> encode(std::string_view text, std::size_t max_len) const;

  std::size_t vocab_size() const noexcept { return vocab_size_; }
  const std::vector<std::string>& words() const noexcept { return words_; }

 private:
  std::size_t vocab_size_ = kFirstWord;
  std::vector<std::string> words_;
  std::map<std::string, int, std::less<>> index_;
};

std::vector<std::string> split_words(std::string_view text);

}  // namespace softembed
