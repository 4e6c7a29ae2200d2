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

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nmt/adam.hpp"
#include "nmt/batch.hpp"
#include "nmt/checkpoint.hpp"
#include "nmt/config.hpp"
#include "nmt/layers.hpp"
#include "nmt/random.hpp"

namespace nmt::lm {

struct LmConfig {
  std::size_t vocab_size = 0;
  std::size_t layers = 6;
  std::size_t heads = 8;
  std::size_t d_model = 512;
  std::size_t d_ff = 2048;
  float dropout = 0.1f;
  std::size_t max_positions = 256;
  NormStyle norm = NormStyle::pre;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  // Reads the keys written by to_map(), each optionally prefixed.
  static LmConfig from_reader(ConfigReader& reader, const std::string& prefix = "");
};

// Encoder-only Transformer with learned positions and an MLM head tied to the
// token embeddings.
class LmModel {
 public:
  LmModel(const LmConfig& config, Rng& init_rng, std::string vocab_hash);

  const LmConfig& config() const { return config_; }
  const std::string& vocab_hash() const { return vocab_hash_; }

  // Final hidden states [batch*len x d_model]. Sequences longer than
  // max_positions raise DataError.
  Tensor hidden(const TokenBatch& batch, const ForwardMode& mode) const;
  // MLM logits [rows x vocab] from hidden states.
  Tensor mlm_logits(const Tensor& hidden) const;

  ParameterList parameters() const;
  std::size_t parameter_count() const { return count_elements(parameters()); }
  // Expected parameter count for a configuration.
  static std::size_t formula_parameter_count(const LmConfig& config);

  void set_trainable(bool trainable);
  const Tensor& token_embedding() const { return token_embedding_; }

 private:
  LmConfig config_;
  std::string vocab_hash_;
  Tensor token_embedding_;     // [V x d]
  Tensor position_embedding_;  // [max_positions x d]
  LayerNorm embedding_norm_;
  std::vector<EncoderLayer> layers_;
  LayerNorm final_norm_;
  Tensor head_bias_;  // [V]
};

struct MaskingPolicy {
  double mask_prob = 0.15;
  double replace_with_mask_prob = 0.8;
  double replace_with_random_prob = 0.1;
  double keep_prob = 0.1;

  void validate() const;
};

struct MaskedTokens {
  std::vector<int> corrupted;
  // Original id at selected positions, PAD (ignored) elsewhere.
  std::vector<int> labels;
  std::size_t selected = 0;
};

// Selects non-special positions with probability mask_prob and corrupts them
// per the policy. Random replacements are drawn from the non-special ids.
MaskedTokens mask_tokens(std::span<const int> ids, const MaskingPolicy& policy,
                         std::size_t vocab_size, Rng& rng);

struct MlmResult {
  Tensor loss;  // mean cross entropy over labeled positions
  double accuracy = 0.0;
  std::size_t labeled = 0;
  std::size_t correct = 0;
};

// Throws DataError when no position carries a label.
MlmResult mlm_loss_and_accuracy(const Tensor& logits, std::span<const int> labels);
MlmResult mlm_loss_and_accuracy(const LmModel& model, const TokenBatch& corrupted,
                                std::span<const int> labels, const ForwardMode& mode);

double perplexity(double mean_loss);

struct PretrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double valid_fraction = 0.005;
  AdamConfig adam{};
  MaskingPolicy masking{};
  std::uint64_t seed = 1;
  std::uint64_t valid_mask_seed = 12345;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double valid_accuracy = 0.0;
  double valid_perplexity = 0.0;
};

// `epoch<TAB>loss<TAB>acc<TAB>ppl` with the validation figures.
std::string format_epoch(const EpochMetrics& m);

// Stateful MLM pretraining loop over id sentences (without EOS; it is
// appended). Sentences longer than max_positions - 1 are truncated.
class Pretrainer {
 public:
  Pretrainer(LmModel& model, std::vector<std::vector<int>> corpus, PretrainOptions options);

  // One pass over the shuffled training split; returns the epoch metrics and
  // updates the best-accuracy snapshot.
  EpochMetrics run_epoch();
  // Masked validation loss/accuracy with a fixed masking seed.
  EpochMetrics evaluate() const;

  std::size_t epoch() const { return epoch_; }
  const std::vector<EpochMetrics>& log() const { return log_; }
  std::size_t best_epoch() const { return best_epoch_; }
  const ParameterList& best_parameters() const { return best_; }
  std::size_t train_size() const { return train_.size(); }
  std::size_t valid_size() const { return valid_.size(); }

  // Full training state (parameters, optimizer moments, rng, log) for resume.
  Checkpoint save_state() const;
  void load_state(const Checkpoint& checkpoint);

 private:
  void snapshot_best();

  LmModel& model_;
  PretrainOptions options_;
  std::vector<std::vector<int>> train_;
  std::vector<std::vector<int>> valid_;
  Adam adam_;
  Rng rng_;
  std::size_t epoch_ = 0;
  std::vector<EpochMetrics> log_;
  std::size_t best_epoch_ = 0;
  double best_accuracy_ = -1.0;
  ParameterList best_;
};

// Checkpoint holding an LM's config, vocabulary and parameters.
Checkpoint make_lm_checkpoint(const LmModel& model, const ParameterList& params,
                              const std::string& vocab_text);
// Rebuilds the model; the stored vocabulary text is returned through
// `vocab_text` when non-null.
LmModel load_lm(const Checkpoint& checkpoint, std::string* vocab_text = nullptr);

}  // namespace nmt::lm
