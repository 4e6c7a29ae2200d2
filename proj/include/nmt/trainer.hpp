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
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nmt/adam.hpp"
#include "nmt/batch.hpp"
#include "nmt/checkpoint.hpp"
#include "nmt/config.hpp"
#include "nmt/metrics.hpp"
#include "nmt/model.hpp"
#include "nmt/vocab.hpp"

namespace nmt {

struct TrainConfig {
  std::size_t batch_sentences = 100;
  std::size_t epochs = 250;
  float label_smoothing = 0.1f;
  double lr = 1e-4;
  std::uint64_t seed = 1;
  std::size_t dev_beam = 12;
  double clip_norm = 1.0;  // 0 disables clipping
  bool keep_all_checkpoints = false;
  std::filesystem::path checkpoint_dir;  // empty: nothing is written

  void validate() const;
  // Excludes checkpoint_dir so that snapshots do not depend on where a run lives.
  std::map<std::string, std::string> to_map() const;
  // The seed is not read here; runs take it from their top-level `seed` key.
  static TrainConfig from_reader(ConfigReader& reader, const std::string& prefix = "");
};

struct IdPair {
  std::vector<int> source;
  std::vector<int> target;
};

struct Batch {
  std::vector<std::size_t> indices;  // positions in the corpus
  TokenBatch source;
  TargetBatch target;
};

// Seeded shuffle, then consecutive chunks of batch_sentences pairs, each padded
// to its own longest sentence.
std::vector<Batch> make_batches(std::span<const IdPair> pairs, std::size_t batch_sentences,
                                std::uint64_t seed);

struct TrainLogEntry {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_bleu = 0.0;
  double dev_bleu_lc = 0.0;
  bool is_best = false;
  double wall_seconds = 0.0;
};

std::string format_log_header();
// Tab separated; wall_seconds is the last column.
std::string format_log_entry(const TrainLogEntry& entry);

// Dev sources (BPE-segmented ids) with tokenized, BPE-free references.
struct DevSet {
  std::vector<std::vector<int>> source;
  std::vector<std::vector<std::string>> references;
};

// Everything needed to translate, as restored from an MT checkpoint.
struct TranslationModel {
  ModelConfig config;
  Vocabulary source_vocab;
  Vocabulary target_vocab;
  std::shared_ptr<lm::LmModel> lm;
  std::unique_ptr<Transformer> model;
};

TranslationModel load_translation_model(const Checkpoint& checkpoint);

using StopPredicate = std::function<bool(const TrainLogEntry&)>;

class Trainer {
 public:
  Trainer(Transformer& model, const Vocabulary& source_vocab, const Vocabulary& target_vocab,
          TrainConfig config, std::vector<IdPair> train, DevSet dev);

  // One training pass, dev evaluation and (with a checkpoint directory) the
  // epoch checkpoint, best record and log file.
  TrainLogEntry run_epoch();
  // Runs the remaining epochs; each finished entry is printed to `progress`.
  // A `stop` predicate that returns true ends training after that epoch.
  void train(std::ostream* progress = nullptr, const StopPredicate& stop = {});

  // Dev sources translated at dev_beam, BPE removed, not detokenized.
  std::vector<std::vector<std::string>> translate_dev() const;
  BleuReport evaluate_dev(bool lowercase = false) const;

  std::size_t epoch() const { return epoch_; }
  // is_best marks only the earliest epoch with the maximum dev BLEU.
  std::vector<TrainLogEntry> log() const;
  std::size_t best_epoch() const { return best_epoch_; }
  double best_bleu() const { return best_bleu_; }
  const TrainConfig& config() const { return config_; }

  // Parameters, optimizer moments, log and the model bundle.
  Checkpoint save_state() const;
  void load_state(const Checkpoint& checkpoint);

  static std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t epoch);
  // Path of the best checkpoint recorded in `dir`.
  static std::filesystem::path best_checkpoint(const std::filesystem::path& dir);

 private:
  void write_outputs(const TrainLogEntry& entry, std::size_t superseded_best);

  Transformer& model_;
  const Vocabulary& source_vocab_;
  const Vocabulary& target_vocab_;
  TrainConfig config_;
  std::vector<IdPair> train_;
  DevSet dev_;
  Adam adam_;
  std::size_t epoch_ = 0;
  std::vector<TrainLogEntry> log_;
  std::size_t best_epoch_ = 0;
  double best_bleu_ = -1.0;
};

}  // namespace nmt
