/* Copyright 2026 The lmembed-nmt Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace nmt::bpe {

// Internal symbols mark the end of a word with this suffix on the final
// symbol; serialized segmentations instead mark every non-final subword with
// the continuation suffix ("low@@ er").
inline constexpr std::string_view kEndOfWord = "</w>";
inline constexpr std::string_view kContinuation = "@@";
inline constexpr std::string_view kFormatTag = "#bpe-v1";

using SymbolPair = std::pair<std::string, std::string>;

class SubwordModel {
 public:
  SubwordModel() = default;
  explicit SubwordModel(std::vector<SymbolPair> merges);

  const std::vector<SymbolPair>& merges() const { return merges_; }
  std::size_t size() const { return merges_.size(); }

  // Priority of a merge (lower applies first), or -1 when absent.
  std::int64_t rank(const std::string& left, const std::string& right) const;

  std::string serialize() const;
  static SubwordModel parse(std::string_view text);
  void save(const std::string& path) const;
  static SubwordModel load(const std::string& path);

 private:
  std::vector<SymbolPair> merges_;
  std::unordered_map<std::string, std::int64_t> ranks_;
};

// Greedy most-frequent-pair merging over the words of a token stream. Ties
// go to the lexicographically smallest pair; learning stops early when the
// best pair occurs only once.
SubwordModel learn_bpe(std::span<const std::string> tokens, std::size_t num_merges);

// Internal symbol sequence of a word after all applicable merges.
std::vector<std::string> segment_symbols(std::string_view word, const SubwordModel& model);

// Serialized segmentation of one word: continuation marker on non-final
// subwords. Characters unseen in training stay single-character subwords.
std::vector<std::string> apply_bpe(std::string_view word, const SubwordModel& model);

// Segments every token of a line.
std::vector<std::string> apply_bpe_tokens(std::span<const std::string> tokens,
                                          const SubwordModel& model);

// Joins continuation-marked subwords back into words.
std::vector<std::string> remove_bpe(std::span<const std::string> subwords);

}  // namespace nmt::bpe
