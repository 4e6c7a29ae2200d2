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

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nmt::text {

using Tokens = std::vector<std::string>;

struct SentencePair {
  Tokens source;
  Tokens target;
  std::size_t line_number = 0;  // 1-based position in the input files
};

enum class CleanDecision { keep, drop_empty, drop_length, drop_ratio };

enum class LengthUnit {
  tokens,  // count tokens after tokenization (default)
  words,   // count whitespace-separated words of the normalized line
};

struct CleanOptions {
  std::size_t max_len = 80;
  double max_ratio = 1.5;
  LengthUnit unit = LengthUnit::tokens;
};

struct CleanReport {
  std::size_t input_pairs = 0;
  std::size_t kept_pairs = 0;
  std::size_t dropped_by_length = 0;
  std::size_t dropped_by_ratio = 0;
  std::size_t dropped_empty = 0;

  bool reconciles() const {
    return input_pairs == kept_pairs + dropped_by_length + dropped_by_ratio + dropped_empty;
  }
  void record(CleanDecision decision);
  // One `key:value` line per counter.
  std::string format() const;
};

// Punctuation normalization (table in docs/text-rules.md), removal of
// non-printing characters, space collapsing and trimming. Throws DataError
// naming `line_number` on invalid UTF-8.
std::string normalize(std::string_view line, std::size_t line_number = 0);

// Rule-based tokenizer: splits punctuation from words while keeping numbers,
// URLs, e-mail addresses and word-internal connectors (don't, e-mail, U.S)
// whole. Deterministic and idempotent on its own joined output.
Tokens tokenize(std::string_view text);

// Reattaches punctuation according to the same rule table; the inverse of
// tokenize() for conventionally spaced text.
std::string detokenize(std::span<const std::string> tokens);

// Splits on ASCII whitespace, dropping empty fields.
Tokens split_whitespace(std::string_view line);
std::string join(std::span<const std::string> tokens, std::string_view separator = " ");

// Drop iff either side is empty, longer than max_len, or the symmetric
// length ratio max/min exceeds max_ratio (strict inequalities).
CleanDecision clean_lengths(std::size_t source_len, std::size_t target_len,
                            const CleanOptions& options);
CleanDecision clean_pair(const SentencePair& pair, const CleanOptions& options);

struct CleanResult {
  std::vector<SentencePair> kept;
  CleanReport report;
};

CleanResult clean_corpus(std::span<const SentencePair> pairs, const CleanOptions& options);

// Normalizes, tokenizes and filters parallel raw lines.
CleanResult preprocess_corpus(std::span<const std::string> source_lines,
                              std::span<const std::string> target_lines,
                              const CleanOptions& options);

const char* to_string(CleanDecision decision);

}  // namespace nmt::text
