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
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "nmt/model.hpp"
#include "nmt/tensor.hpp"
#include "nmt/vocab.hpp"

namespace nmt {

// Next-token distributions for a set of equally long prefixes, each starting
// with BOS. Rows are log-probabilities over the target vocabulary.
class StepModel {
 public:
  virtual ~StepModel() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<std::vector<double>> next_log_probs(
      std::span<const std::vector<int>> prefixes) = 0;
};

struct Hypothesis {
  std::vector<int> tokens;  // BOS first; EOS last when finished
  double score = 0.0;       // cumulative log-probability
  bool finished = false;

  // Tokens between BOS and EOS.
  std::vector<int> output() const;
};

struct BeamOptions {
  std::size_t beam_size = 12;
  std::size_t max_len = 0;  // generated tokens including EOS; 0 means 2 * source length + 10
  std::size_t nbest = 1;    // capped at beam_size
  double length_penalty = 0.0;  // score / length^alpha when positive
  int bos = kBosId;
  int eos = kEosId;
};

struct BeamResult {
  std::vector<Hypothesis> nbest;  // best first
  bool truncated = false;         // no hypothesis emitted EOS within max_len

  const Hypothesis& best() const { return nbest.front(); }
};

std::size_t default_max_len(std::size_t source_length);

// `options.max_len` must be set (non-zero).
BeamResult beam_search(StepModel& model, const BeamOptions& options);

// Sum of next-token log-probabilities of `tokens[1:]` given their prefixes.
double score_sequence(StepModel& model, std::span<const int> tokens);

// Adapter for the translation model: the source is encoded once and its
// memory is reused for every expansion step.
class TransformerStepModel : public StepModel {
 public:
  // With `incremental`, prefixes that extend the previous call's prefixes
  // reuse cached keys and values; otherwise every call decodes from scratch.
  TransformerStepModel(const Transformer& model, std::span<const int> source,
                       bool incremental = true);

  std::size_t vocab_size() const override;
  std::vector<std::vector<double>> next_log_probs(
      std::span<const std::vector<int>> prefixes) override;

 private:
  std::vector<std::vector<double>> full_decode(std::span<const std::vector<int>> prefixes);
  std::vector<std::vector<double>> cached_decode(std::span<const std::vector<int>> prefixes);

  const Transformer& model_;
  bool incremental_ = true;
  DecoderCache cache_;
  std::vector<std::vector<int>> cached_prefixes_;
  Tensor memory_;
  std::size_t memory_len_ = 0;
  std::vector<std::uint8_t> memory_valid_;
  std::size_t tiled_count_ = 0;
  Tensor tiled_memory_;
  std::vector<std::uint8_t> tiled_valid_;
};

BeamResult translate_ids(const Transformer& model, std::span<const int> source,
                         BeamOptions options);

struct TranslateOptions {
  BeamOptions beam;
  bool detokenize = true;
};

struct TranslationStats {
  std::size_t lines = 0;
  std::size_t failed = 0;
  std::size_t truncated = 0;
};

// One line per input line of BPE-segmented source tokens. Each output line is
// the best hypothesis with BPE markers removed (and detokenized when
// requested), or with `nbest > 1` the n-best entries as
// `index ||| text ||| score` lines. A line that fails to decode becomes an
// empty line and a warning on `warnings`.
std::vector<std::string> translate_corpus(const Transformer& model, const Vocabulary& source_vocab,
                                         const Vocabulary& target_vocab,
                                         std::span<const std::string> lines,
                                         const TranslateOptions& options,
                                         TranslationStats* stats = nullptr,
                                         std::ostream* warnings = nullptr);

// Target text for a hypothesis' output ids.
std::string render_translation(const Vocabulary& target_vocab, std::span<const int> ids,
                               bool detokenize);

}  // namespace nmt
