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

#include "nmt/model.hpp"

#include <cmath>

#include "nmt/error.hpp"
#include "nmt/vocab.hpp"

namespace nmt {

namespace {

// Rows of a positional table for a batch laid out as [batch*len x d].
Tensor positional_rows(const Tensor& table, std::size_t batch, std::size_t len) {
  if (len > table.dim(0)) {
    throw DataError("sequence of length " + std::to_string(len) + " exceeds max_positions " +
                    std::to_string(table.dim(0)));
  }
  const std::size_t d = table.dim(1);
  std::vector<float> values(batch * len * d);
  const auto src = table.data();
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(len * d),
              values.begin() + static_cast<std::ptrdiff_t>(b * len * d));
  }
  return Tensor({batch * len, d}, std::move(values));
}

Tensor scaled_lookup(const Tensor& table, const TokenBatch& batch, const Tensor& positional) {
  const auto d = static_cast<float>(table.dim(1));
  return add(scale(embedding(table, batch.ids), std::sqrt(d)),
             positional_rows(positional, batch.batch, batch.len));
}

}  // namespace

const char* to_string(ProviderKind kind) {
  return kind == ProviderKind::lookup ? "lookup" : "frozen_lm";
}

ProviderKind parse_provider_kind(const std::string& text) {
  if (text == "lookup") return ProviderKind::lookup;
  if (text == "frozen_lm") return ProviderKind::frozen_lm;
  throw ConfigError("provider must be 'lookup' or 'frozen_lm', got '" + text + "'");
}

void ModelConfig::validate() const {
  if (layers == 0 || heads == 0 || d_model == 0 || d_ff == 0 || max_positions == 0) {
    throw ConfigError("layers, heads, d_model, d_ff and max_positions must be positive");
  }
  if (d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by heads " +
                      std::to_string(heads));
  }
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw ConfigError("dropout must be in [0, 1)");
  if (src_vocab_size <= static_cast<std::size_t>(kNumSpecials) ||
      tgt_vocab_size <= static_cast<std::size_t>(kNumSpecials)) {
    throw ConfigError("vocabulary sizes must exceed the number of special symbols");
  }
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {{"layers", std::to_string(layers)},
          {"heads", std::to_string(heads)},
          {"d_model", std::to_string(d_model)},
          {"d_ff", std::to_string(d_ff)},
          {"dropout", format_number(dropout)},
          {"src_vocab_size", std::to_string(src_vocab_size)},
          {"tgt_vocab_size", std::to_string(tgt_vocab_size)},
          {"provider", to_string(provider)},
          {"max_positions", std::to_string(max_positions)},
          {"norm", to_string(norm)}};
}

ModelConfig ModelConfig::from_reader(ConfigReader& reader, const std::string& prefix) {
  ModelConfig c;
  c.layers = reader.get_size(prefix + "layers", c.layers);
  c.heads = reader.get_size(prefix + "heads", c.heads);
  c.d_model = reader.get_size(prefix + "d_model", c.d_model);
  c.d_ff = reader.get_size(prefix + "d_ff", c.d_ff);
  c.dropout = static_cast<float>(reader.get_double(prefix + "dropout", c.dropout));
  c.src_vocab_size = reader.get_size(prefix + "src_vocab_size", c.src_vocab_size);
  c.tgt_vocab_size = reader.get_size(prefix + "tgt_vocab_size", c.tgt_vocab_size);
  c.provider = parse_provider_kind(reader.get_string(prefix + "provider", to_string(c.provider)));
  c.max_positions = reader.get_size(prefix + "max_positions", c.max_positions);
  c.norm = parse_norm_style(reader.get_string(prefix + "norm", to_string(c.norm)));
  return c;
}

double sinusoidal_pe(std::size_t position, std::size_t dim_index, std::size_t d_model) {
  const double pair = static_cast<double>(dim_index / 2) * 2.0;
  const double angle =
      static_cast<double>(position) / std::pow(10000.0, pair / static_cast<double>(d_model));
  return dim_index % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

Tensor sinusoidal_table(std::size_t max_positions, std::size_t d_model) {
  std::vector<float> values(max_positions * d_model);
  for (std::size_t p = 0; p < max_positions; ++p) {
    for (std::size_t i = 0; i < d_model; ++i) {
      values[p * d_model + i] = static_cast<float>(sinusoidal_pe(p, i, d_model));
    }
  }
  return Tensor({max_positions, d_model}, std::move(values));
}

EmbeddingProvider EmbeddingProvider::lookup(std::size_t vocab_size, std::size_t d_model,
                                            std::size_t max_positions, Rng& rng) {
  EmbeddingProvider p;
  p.kind_ = ProviderKind::lookup;
  p.d_model_ = d_model;
  p.table_ = xavier_uniform(vocab_size, d_model, rng);
  p.positional_ = sinusoidal_table(max_positions, d_model);
  return p;
}

EmbeddingProvider EmbeddingProvider::frozen(std::shared_ptr<lm::LmModel> lm, std::size_t d_model,
                                            Rng& rng) {
  if (!lm) throw ConfigError("frozen_lm provider needs a language model");
  EmbeddingProvider p;
  p.kind_ = ProviderKind::frozen_lm;
  p.d_model_ = d_model;
  lm->set_trainable(false);
  p.resize_ = Linear(lm->config().d_model, d_model, rng);
  p.lm_ = std::move(lm);
  return p;
}

Tensor EmbeddingProvider::embed(const TokenBatch& batch, const ForwardMode& mode) const {
  if (kind_ == ProviderKind::lookup) {
    return mode.apply_dropout(scaled_lookup(table_, batch, positional_));
  }
  Tensor features;
  {
    NoGradGuard no_grad;
    features = lm_->hidden(batch, ForwardMode{false, 0.0f, nullptr});
  }
  return mode.apply_dropout(resize_(features));
}

void EmbeddingProvider::collect(const std::string& prefix, ParameterList& out) const {
  if (kind_ == ProviderKind::lookup) {
    out.push_back({prefix + ".table", table_});
  } else {
    resize_.collect(prefix + ".resize", out);
  }
}

Transformer::Transformer(const ModelConfig& config, Rng& init_rng,
                         std::shared_ptr<lm::LmModel> lm, const std::string& src_vocab_hash)
    : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  if (config_.provider == ProviderKind::frozen_lm) {
    if (!lm) throw ConfigError("provider frozen_lm requires a language model checkpoint");
    if (lm->vocab_hash() != src_vocab_hash) {
      throw ConfigError("source vocabulary (hash " + src_vocab_hash.substr(0, 12) +
                        ") differs from the LM vocabulary (hash " +
                        lm->vocab_hash().substr(0, 12) + ")");
    }
    if (lm->config().vocab_size != config_.src_vocab_size) {
      throw ConfigError("src_vocab_size " + std::to_string(config_.src_vocab_size) +
                        " differs from the LM vocabulary size " +
                        std::to_string(lm->config().vocab_size));
    }
    source_ = EmbeddingProvider::frozen(std::move(lm), d, init_rng);
  } else {
    source_ = EmbeddingProvider::lookup(config_.src_vocab_size, d, config_.max_positions, init_rng);
  }
  target_table_ = xavier_uniform(config_.tgt_vocab_size, d, init_rng);
  target_positional_ = sinusoidal_table(config_.max_positions, d);
  for (std::size_t i = 0; i < config_.layers; ++i) {
    encoder_.emplace_back(d, config_.heads, config_.d_ff, init_rng);
  }
  for (std::size_t i = 0; i < config_.layers; ++i) {
    decoder_.emplace_back(d, config_.heads, config_.d_ff, init_rng);
  }
  encoder_norm_ = LayerNorm(d);
  decoder_norm_ = LayerNorm(d);
}

Tensor Transformer::embed_source(const TokenBatch& source, const ForwardMode& mode) const {
  return source_.embed(source, mode);
}

Tensor Transformer::embed_target(const TokenBatch& target_inputs, const ForwardMode& mode) const {
  return mode.apply_dropout(scaled_lookup(target_table_, target_inputs, target_positional_));
}

Tensor Transformer::encode(const TokenBatch& source, const ForwardMode& mode) const {
  const Tensor x = embed_source(source, mode);
  return run_encoder(encoder_, encoder_norm_, x, source.batch, source.len, source.valid,
                     config_.norm, mode);
}

Tensor Transformer::decode(const Tensor& memory, std::size_t memory_len,
                           std::span<const std::uint8_t> memory_valid,
                           const TokenBatch& target_inputs, const ForwardMode& mode) const {
  Tensor h = embed_target(target_inputs, mode);
  for (const auto& layer : decoder_) {
    h = layer(h, target_inputs.batch, target_inputs.len, target_inputs.valid, memory, memory_len,
              memory_valid, config_.norm, mode);
  }
  if (config_.norm == NormStyle::pre) h = decoder_norm_(h);
  return matmul_nt(h, target_table_);
}

void DecoderCache::select(std::span<const int> rows) {
  std::vector<int> order;
  order.reserve(rows.size() * length);
  for (const int r : rows) {
    if (r < 0 || static_cast<std::size_t>(r) >= hypotheses) {
      throw DimensionError("cache row " + std::to_string(r) + " out of " +
                           std::to_string(hypotheses));
    }
    for (std::size_t j = 0; j < length; ++j) {
      order.push_back(static_cast<int>(static_cast<std::size_t>(r) * length + j));
    }
  }
  hypotheses = rows.size();
  if (length == 0) return;
  for (auto& t : self_keys) t = embedding(t, order);
  for (auto& t : self_values) t = embedding(t, order);
}

DecoderCache Transformer::start_decoding(const Tensor& memory, std::size_t memory_len,
                                         std::span<const std::uint8_t> memory_valid) const {
  if (memory.dim(0) != memory_len || memory_valid.size() != memory_len) {
    throw DimensionError("decoder cache expects the memory of one sentence");
  }
  DecoderCache cache;
  cache.memory_len = memory_len;
  cache.memory_valid.assign(memory_valid.begin(), memory_valid.end());
  for (const auto& layer : decoder_) {
    cache.memory_keys.push_back(layer.cross_attention.k(memory));
    cache.memory_values.push_back(layer.cross_attention.v(memory));
  }
  cache.self_keys.resize(decoder_.size());
  cache.self_values.resize(decoder_.size());
  return cache;
}

Tensor Transformer::decode_step(DecoderCache& cache, std::span<const int> tokens) const {
  if (cache.length == 0 && cache.hypotheses == 0) cache.hypotheses = tokens.size();
  const std::size_t hyps = cache.hypotheses;
  if (tokens.size() != hyps) {
    throw DimensionError("decode_step got " + std::to_string(tokens.size()) +
                         " tokens for " + std::to_string(hyps) + " hypotheses");
  }
  const std::size_t pos = cache.length;
  if (pos >= target_positional_.dim(0)) {
    throw DataError("sequence of length " + std::to_string(pos + 1) +
                    " exceeds max_positions " + std::to_string(target_positional_.dim(0)));
  }
  const auto d = static_cast<float>(target_table_.dim(1));
  const std::vector<int> pos_ids(hyps, static_cast<int>(pos));
  Tensor h = add(scale(embedding(target_table_, tokens), std::sqrt(d)),
                 embedding(target_positional_, pos_ids));

  std::vector<int> tile;
  tile.reserve(hyps * cache.memory_len);
  std::vector<std::uint8_t> valid;
  valid.reserve(hyps * cache.memory_len);
  for (std::size_t b = 0; b < hyps; ++b) {
    for (std::size_t j = 0; j < cache.memory_len; ++j) {
      tile.push_back(static_cast<int>(j));
      valid.push_back(cache.memory_valid[j]);
    }
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    h = decoder_[i].step(h, hyps, pos, cache.self_keys[i], cache.self_values[i],
                         embedding(cache.memory_keys[i], tile),
                         embedding(cache.memory_values[i], tile), cache.memory_len, valid,
                         config_.norm);
  }
  ++cache.length;
  if (config_.norm == NormStyle::pre) h = decoder_norm_(h);
  return matmul_nt(h, target_table_);
}

Tensor Transformer::loss(const TokenBatch& source, const TargetBatch& target,
                         float label_smoothing, const ForwardMode& mode) const {
  if (source.batch != target.inputs.batch) {
    throw DimensionError("source batch " + std::to_string(source.batch) + " vs target batch " +
                         std::to_string(target.inputs.batch));
  }
  const Tensor memory = encode(source, mode);
  const Tensor logits = decode(memory, source.len, source.valid, target.inputs, mode);
  return cross_entropy_label_smoothed(logits, target.targets, label_smoothing, kPadId);
}

ParameterList Transformer::parameters() const {
  ParameterList out;
  source_.collect("src_embed", out);
  out.push_back({"tgt_embed.table", target_table_});
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    encoder_[i].collect("encoder.layers." + std::to_string(i), out);
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    decoder_[i].collect("decoder.layers." + std::to_string(i), out);
  }
  if (config_.norm == NormStyle::pre) {
    encoder_norm_.collect("encoder.final_norm", out);
    decoder_norm_.collect("decoder.final_norm", out);
  }
  return out;
}

ParameterList Transformer::frozen_parameters() const {
  ParameterList out;
  if (source_.language_model()) {
    for (const auto& p : source_.language_model()->parameters()) {
      out.push_back({"lm." + p.name, p.tensor});
    }
  }
  return out;
}

ParameterCount Transformer::parameter_count() const {
  const std::size_t trainable = count_elements(parameters());
  return {trainable, trainable + count_elements(frozen_parameters())};
}

ParameterCount Transformer::formula_parameter_count(const ModelConfig& c,
                                                    const lm::LmConfig* lm_config) {
  const std::size_t d = c.d_model;
  ParameterCount count;
  if (c.provider == ProviderKind::lookup) {
    count.trainable += c.src_vocab_size * d;
  } else {
    if (!lm_config) throw ConfigError("frozen_lm parameter count needs the LM configuration");
    count.trainable += Linear::count(lm_config->d_model, d);
  }
  count.trainable += c.tgt_vocab_size * d;
  count.trainable += c.layers * (EncoderLayer::count(d, c.d_ff) + DecoderLayer::count(d, c.d_ff));
  if (c.norm == NormStyle::pre) count.trainable += 2 * LayerNorm::count(d);
  count.total = count.trainable;
  if (c.provider == ProviderKind::frozen_lm) {
    count.total += lm::LmModel::formula_parameter_count(*lm_config);
  }
  return count;
}

}  // namespace nmt
