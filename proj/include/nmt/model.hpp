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

#include <map>
#include <memory>
#include <string>

#include "nmt/batch.hpp"
#include "nmt/config.hpp"
#include "nmt/layers.hpp"
#include "nmt/lm.hpp"

namespace nmt {

enum class ProviderKind { lookup, frozen_lm };

const char* to_string(ProviderKind kind);
ProviderKind parse_provider_kind(const std::string& text);

struct ModelConfig {
  std::size_t layers = 6;
  std::size_t heads = 8;
  std::size_t d_model = 512;
  std::size_t d_ff = 2048;
  float dropout = 0.3f;
  std::size_t src_vocab_size = 0;
  std::size_t tgt_vocab_size = 0;
  ProviderKind provider = ProviderKind::lookup;
  std::size_t max_positions = 256;
  NormStyle norm = NormStyle::pre;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_reader(ConfigReader& reader, const std::string& prefix = "");
};

// Sinusoidal positional encoding: sin on even dimensions, cos on odd ones,
// wavelength 10000^(2i/d_model) for the pair index i.
double sinusoidal_pe(std::size_t position, std::size_t dim_index, std::size_t d_model);
// [max_positions x d_model] table of sinusoidal_pe values.
Tensor sinusoidal_table(std::size_t max_positions, std::size_t d_model);

// Source-side input vectors: a trained lookup table scaled by sqrt(d_model)
// plus positional encoding, or the final hidden layer of a frozen LM passed
// through a trainable resize layer.
class EmbeddingProvider {
 public:
  static EmbeddingProvider lookup(std::size_t vocab_size, std::size_t d_model,
                                  std::size_t max_positions, Rng& rng);
  static EmbeddingProvider frozen(std::shared_ptr<lm::LmModel> lm, std::size_t d_model, Rng& rng);

  ProviderKind kind() const { return kind_; }
  // [rows x d_model], dropout applied in training mode.
  Tensor embed(const TokenBatch& batch, const ForwardMode& mode) const;

  const Tensor& table() const { return table_; }
  const Tensor& positional_encoding() const { return positional_; }
  const Linear& resize() const { return resize_; }
  const std::shared_ptr<lm::LmModel>& language_model() const { return lm_; }

  void collect(const std::string& prefix, ParameterList& out) const;

 private:
  ProviderKind kind_ = ProviderKind::lookup;
  std::size_t d_model_ = 0;
  Tensor table_;
  Tensor positional_;
  std::shared_ptr<lm::LmModel> lm_;
  Linear resize_;
};

struct ParameterCount {
  std::size_t trainable = 0;
  std::size_t total = 0;
};

// Per-layer projected keys and values for incremental decoding of one source
// sentence. Hypotheses are stored in blocks of `length` rows.
struct DecoderCache {
  std::size_t hypotheses = 0;
  std::size_t length = 0;
  std::size_t memory_len = 0;
  std::vector<std::uint8_t> memory_valid;
  std::vector<Tensor> memory_keys;
  std::vector<Tensor> memory_values;
  std::vector<Tensor> self_keys;
  std::vector<Tensor> self_values;

  // Keeps the hypotheses at `rows`, in that order; repeats are allowed.
  void select(std::span<const int> rows);
};

// Encoder-decoder Transformer. The target embedding table doubles as the
// output projection: logits = decoder_state x E_out^T.
class Transformer {
 public:
  // A frozen-LM configuration needs the LM and the hash of the source
  // vocabulary, which must equal the LM's vocabulary hash.
  Transformer(const ModelConfig& config, Rng& init_rng, std::shared_ptr<lm::LmModel> lm = nullptr,
              const std::string& src_vocab_hash = "");

  const ModelConfig& config() const { return config_; }
  const EmbeddingProvider& source_embeddings() const { return source_; }
  const Tensor& target_embedding() const { return target_table_; }
  const Tensor& target_positional_encoding() const { return target_positional_; }

  Tensor embed_source(const TokenBatch& source, const ForwardMode& mode) const;
  Tensor embed_target(const TokenBatch& target_inputs, const ForwardMode& mode) const;
  // Memory states [batch*src_len x d_model].
  Tensor encode(const TokenBatch& source, const ForwardMode& mode) const;
  // Logits [batch*tgt_len x tgt_vocab] for every target input position.
  // `memory_valid` flags real source positions, one per memory row.
  Tensor decode(const Tensor& memory, std::size_t memory_len,
                std::span<const std::uint8_t> memory_valid, const TokenBatch& target_inputs,
                const ForwardMode& mode) const;
  // Inference only: `memory` encodes a single sentence.
  DecoderCache start_decoding(const Tensor& memory, std::size_t memory_len,
                              std::span<const std::uint8_t> memory_valid) const;
  // Feeds one token per cached hypothesis and returns the logits [hyps x V]
  // of the new position. With an empty cache, `tokens.size()` sets the
  // number of hypotheses.
  Tensor decode_step(DecoderCache& cache, std::span<const int> tokens) const;
  // Mean label-smoothed cross entropy over non-pad target positions.
  Tensor loss(const TokenBatch& source, const TargetBatch& target, float label_smoothing,
              const ForwardMode& mode) const;

  // Trainable tensors only.
  ParameterList parameters() const;
  // Frozen LM tensors, named "lm.<name>".
  ParameterList frozen_parameters() const;
  ParameterCount parameter_count() const;

  // Per-config count: trainable = source side + E_out (counted once) +
  // layers * (encoder layer + decoder layer) + final norms (pre-norm only);
  // total adds the LM's own count for frozen-LM configurations.
  static ParameterCount formula_parameter_count(const ModelConfig& config,
                                                const lm::LmConfig* lm_config);

 private:
  ModelConfig config_;
  EmbeddingProvider source_;
  Tensor target_table_;
  Tensor target_positional_;
  std::vector<EncoderLayer> encoder_;
  LayerNorm encoder_norm_;
  std::vector<DecoderLayer> decoder_;
  LayerNorm decoder_norm_;
};

}  // namespace nmt
