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
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nmt/lm.hpp"
#include "nmt/model.hpp"
#include "nmt/trainer.hpp"

namespace nmt {

// Lines of a UTF-8 text file without their terminators (a trailing "\r" is
// dropped too).
std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

// Machine-translation run described by a flat config file:
//   seed, model.*, train.*, data.train_source, data.train_target,
//   data.dev_source, data.dev_target, data.source_vocab, data.target_vocab,
//   optional data.dev_reference and data.lm_checkpoint.
// Vocabulary sizes come from the vocabulary files.
struct TrainRun {
  std::uint64_t seed = 1;
  ModelConfig model;
  TrainConfig train;
  std::filesystem::path train_source;
  std::filesystem::path train_target;
  std::filesystem::path dev_source;
  std::filesystem::path dev_target;
  std::filesystem::path dev_reference;
  std::filesystem::path source_vocab;
  std::filesystem::path target_vocab;
  std::filesystem::path lm_checkpoint;

  // Rejects unknown keys and missing inputs before any work starts.
  static TrainRun from_reader(ConfigReader& reader, std::optional<std::uint64_t> seed_override);
  static TrainRun load(const std::filesystem::path& config,
                       std::optional<std::uint64_t> seed_override = std::nullopt);
};

struct TrainOutcome {
  std::vector<TrainLogEntry> log;
  std::size_t best_epoch = 0;
  double best_bleu = 0.0;
  std::filesystem::path best_checkpoint;  // empty without a checkpoint directory
  ParameterCount parameters;
  std::string lm_checksum_before;  // frozen-LM runs only
  std::string lm_checksum_after;
  std::string resize_checksum_before;
  std::string resize_checksum_after;
};

// Builds vocabularies, corpora and the model, then trains. With `resume`
// the run continues from that MT checkpoint.
TrainOutcome run_training(const TrainRun& run,
                          const std::optional<std::filesystem::path>& resume = std::nullopt,
                          std::ostream* progress = nullptr, const StopPredicate& stop = {});

// LM pretraining run: seed, lm.*, pretrain.*, data.corpus, data.vocab,
// output.checkpoint and optional output.state (training state for resume,
// default "<checkpoint>.state").
struct PretrainRun {
  std::uint64_t seed = 1;
  lm::LmConfig lm;
  lm::PretrainOptions options;
  std::filesystem::path corpus;
  std::filesystem::path vocab;
  std::filesystem::path output;
  std::filesystem::path state;

  static PretrainRun from_reader(ConfigReader& reader, std::optional<std::uint64_t> seed_override);
  static PretrainRun load(const std::filesystem::path& config,
                          std::optional<std::uint64_t> seed_override = std::nullopt);
};

struct PretrainOutcome {
  std::vector<lm::EpochMetrics> log;
  std::size_t best_epoch = 0;
  double uniform_perplexity = 0.0;  // the vocabulary size
};

// Trains, writes the state after every epoch and the best-accuracy LM
// checkpoint at the end.
PretrainOutcome run_pretraining(const PretrainRun& run,
                                const std::optional<std::filesystem::path>& resume = std::nullopt,
                                std::ostream* progress = nullptr);

}  // namespace nmt
