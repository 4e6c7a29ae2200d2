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

#include "nmt/lm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "nmt/error.hpp"
#include "nmt/vocab.hpp"

namespace nmt::lm {

namespace {

ParameterList clone_all(const ParameterList& params) {
  ParameterList out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.tensor.detach().clone()});
  return out;
}

ParameterList with_prefix(const std::string& prefix, const ParameterList& params) {
  ParameterList out;
  for (const auto& p : params) out.push_back({prefix + p.name, p.tensor});
  return out;
}

}  // namespace

void LmConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(kNumSpecials)) {
    throw ConfigError("lm vocab_size must exceed the number of special symbols");
  }
  if (layers == 0 || heads == 0 || d_model == 0 || d_ff == 0 || max_positions == 0) {
    throw ConfigError("lm layers, heads, d_model, d_ff and max_positions must be positive");
  }
  if (d_model % heads != 0) {
    throw ConfigError("lm d_model " + std::to_string(d_model) + " is not divisible by heads " +
                      std::to_string(heads));
  }
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw ConfigError("lm dropout must be in [0, 1)");
}

std::map<std::string, std::string> LmConfig::to_map() const {
  return {{"vocab_size", std::to_string(vocab_size)},
          {"layers", std::to_string(layers)},
          {"heads", std::to_string(heads)},
          {"d_model", std::to_string(d_model)},
          {"d_ff", std::to_string(d_ff)},
          {"dropout", format_number(dropout)},
          {"max_positions", std::to_string(max_positions)},
          {"norm", to_string(norm)}};
}

LmConfig LmConfig::from_reader(ConfigReader& reader, const std::string& prefix) {
  LmConfig c;
  c.vocab_size = reader.get_size(prefix + "vocab_size", c.vocab_size);
  c.layers = reader.get_size(prefix + "layers", c.layers);
  c.heads = reader.get_size(prefix + "heads", c.heads);
  c.d_model = reader.get_size(prefix + "d_model", c.d_model);
  c.d_ff = reader.get_size(prefix + "d_ff", c.d_ff);
  c.dropout = static_cast<float>(reader.get_double(prefix + "dropout", c.dropout));
  c.max_positions = reader.get_size(prefix + "max_positions", c.max_positions);
  c.norm = parse_norm_style(reader.get_string(prefix + "norm", to_string(c.norm)));
  return c;
}

LmModel::LmModel(const LmConfig& config, Rng& init_rng, std::string vocab_hash)
    : config_(config), vocab_hash_(std::move(vocab_hash)) {
  config_.validate();
  const std::size_t d = config_.d_model;
  token_embedding_ = xavier_uniform(config_.vocab_size, d, init_rng);
  position_embedding_ = xavier_uniform(config_.max_positions, d, init_rng);
  embedding_norm_ = LayerNorm(d);
  for (std::size_t i = 0; i < config_.layers; ++i) {
    layers_.emplace_back(d, config_.heads, config_.d_ff, init_rng);
  }
  final_norm_ = LayerNorm(d);
  head_bias_ = Tensor(Shape{config_.vocab_size}, true);
}

Tensor LmModel::hidden(const TokenBatch& batch, const ForwardMode& mode) const {
  if (batch.len > config_.max_positions) {
    throw DataError("sequence of length " + std::to_string(batch.len) +
                    " exceeds the LM's max_positions " + std::to_string(config_.max_positions));
  }
  std::vector<int> positions(batch.rows());
  for (std::size_t r = 0; r < positions.size(); ++r) {
    positions[r] = static_cast<int>(r % batch.len);
  }
  Tensor x = add(embedding(token_embedding_, batch.ids), embedding(position_embedding_, positions));
  x = mode.apply_dropout(embedding_norm_(x));
  return run_encoder(layers_, final_norm_, x, batch.batch, batch.len, batch.valid, config_.norm,
                     mode);
}

Tensor LmModel::mlm_logits(const Tensor& hidden) const {
  return add_bias(matmul_nt(hidden, token_embedding_), head_bias_);
}

ParameterList LmModel::parameters() const {
  ParameterList out;
  out.push_back({"token_embedding", token_embedding_});
  out.push_back({"position_embedding", position_embedding_});
  embedding_norm_.collect("embedding_norm", out);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].collect("layers." + std::to_string(i), out);
  }
  if (config_.norm == NormStyle::pre) final_norm_.collect("final_norm", out);
  out.push_back({"head_bias", head_bias_});
  return out;
}

std::size_t LmModel::formula_parameter_count(const LmConfig& c) {
  const std::size_t d = c.d_model;
  std::size_t n = c.vocab_size * d + c.max_positions * d + LayerNorm::count(d);
  n += c.layers * EncoderLayer::count(d, c.d_ff);
  if (c.norm == NormStyle::pre) n += LayerNorm::count(d);
  return n + c.vocab_size;
}

void LmModel::set_trainable(bool trainable) {
  for (auto& p : parameters()) {
    Tensor handle = p.tensor;
    handle.set_requires_grad(trainable);
    if (!trainable) handle.clear_grad();
  }
}

void MaskingPolicy::validate() const {
  const auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in_unit(mask_prob) || !in_unit(replace_with_mask_prob) ||
      !in_unit(replace_with_random_prob) || !in_unit(keep_prob)) {
    throw ConfigError("masking probabilities must lie in [0, 1]");
  }
  if (std::fabs(replace_with_mask_prob + replace_with_random_prob + keep_prob - 1.0) > 1e-9) {
    throw ConfigError("mask/random/keep probabilities must sum to 1");
  }
}

MaskedTokens mask_tokens(std::span<const int> ids, const MaskingPolicy& policy,
                         std::size_t vocab_size, Rng& rng) {
  policy.validate();
  MaskedTokens out;
  out.corrupted.assign(ids.begin(), ids.end());
  out.labels.assign(ids.size(), kPadId);
  const auto random_pool = vocab_size > static_cast<std::size_t>(kNumSpecials)
                               ? vocab_size - static_cast<std::size_t>(kNumSpecials)
                               : 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < kNumSpecials) continue;
    if (!(uniform01(rng) < policy.mask_prob)) continue;
    out.labels[i] = ids[i];
    ++out.selected;
    const double u = uniform01(rng);
    if (u < policy.replace_with_mask_prob) {
      out.corrupted[i] = kMaskId;
    } else if (u < policy.replace_with_mask_prob + policy.replace_with_random_prob &&
               random_pool > 0) {
      out.corrupted[i] = kNumSpecials + static_cast<int>(uniform_index(rng, random_pool));
    }
  }
  return out;
}

MlmResult mlm_loss_and_accuracy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("mlm loss: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  MlmResult r;
  const std::size_t V = logits.dim(1);
  const auto data = logits.data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kPadId) continue;
    ++r.labeled;
    const float* row = data.data() + i * V;
    std::size_t best = 0;
    for (std::size_t j = 1; j < V; ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (static_cast<int>(best) == labels[i]) ++r.correct;
  }
  if (r.labeled == 0) throw DataError("MLM batch has no labeled positions; draw a new mask");
  r.loss = cross_entropy_label_smoothed(logits, labels, 0.0f, kPadId);
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.labeled);
  return r;
}

MlmResult mlm_loss_and_accuracy(const LmModel& model, const TokenBatch& corrupted,
                                std::span<const int> labels, const ForwardMode& mode) {
  return mlm_loss_and_accuracy(model.mlm_logits(model.hidden(corrupted, mode)), labels);
}

double perplexity(double mean_loss) { return std::exp(mean_loss); }

std::string format_epoch(const EpochMetrics& m) {
  char buffer[128];
  std::snprintf(buffer, sizeof buffer, "%zu\t%.6f\t%.6f\t%.6f", m.epoch, m.valid_loss,
                m.valid_accuracy, m.valid_perplexity);
  return buffer;
}

Pretrainer::Pretrainer(LmModel& model, std::vector<std::vector<int>> corpus,
                       PretrainOptions options)
    : model_(model),
      options_(options),
      adam_(model.parameters(), options.adam),
      rng_(options.seed) {
  options_.masking.validate();
  if (options_.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(options_.valid_fraction > 0.0 && options_.valid_fraction < 1.0)) {
    throw ConfigError("valid_fraction must be in (0, 1)");
  }
  const std::size_t limit = model.config().max_positions - 1;
  std::vector<std::vector<int>> sentences;
  for (auto& s : corpus) {
    if (s.empty()) continue;
    if (s.size() > limit) s.resize(limit);
    sentences.push_back(std::move(s));
  }
  if (sentences.size() < 2) throw DataError("LM pretraining needs at least two sentences");
  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(options_.seed ^ 0x9e3779b97f4a7c15ULL);
  shuffle_range(order.begin(), order.end(), split_rng);
  auto n_valid = static_cast<std::size_t>(
      std::llround(options_.valid_fraction * static_cast<double>(sentences.size())));
  n_valid = std::clamp<std::size_t>(n_valid, 1, sentences.size() - 1);
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_valid ? valid_ : train_).push_back(sentences[order[i]]);
  }
  model_.set_trainable(true);
}

EpochMetrics Pretrainer::run_epoch() {
  std::vector<std::size_t> order(train_.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle_range(order.begin(), order.end(), rng_);
  const ForwardMode mode{true, model_.config().dropout, &rng_};
  double loss_sum = 0.0;
  std::size_t labeled = 0;
  for (std::size_t start = 0; start < order.size(); start += options_.batch_size) {
    const std::size_t end = std::min(order.size(), start + options_.batch_size);
    std::vector<std::vector<int>> sentences;
    for (std::size_t i = start; i < end; ++i) sentences.push_back(train_[order[i]]);
    TokenBatch batch = make_token_batch(sentences, true);
    MaskedTokens masked;
    for (int attempt = 0; attempt < 100 && masked.selected == 0; ++attempt) {
      masked = mask_tokens(batch.ids, options_.masking, model_.config().vocab_size, rng_);
    }
    if (masked.selected == 0) continue;
    batch.ids = masked.corrupted;
    const MlmResult r = mlm_loss_and_accuracy(model_, batch, masked.labels, mode);
    check_finite(r.loss, "MLM loss");
    r.loss.backward();
    adam_.step();
    adam_.zero_grad();
    loss_sum += static_cast<double>(r.loss.item()) * static_cast<double>(r.labeled);
    labeled += r.labeled;
  }
  EpochMetrics m = evaluate();
  m.epoch = ++epoch_;
  m.train_loss = labeled ? loss_sum / static_cast<double>(labeled) : 0.0;
  log_.push_back(m);
  if (m.valid_accuracy > best_accuracy_) {
    best_accuracy_ = m.valid_accuracy;
    best_epoch_ = m.epoch;
    snapshot_best();
  }
  return m;
}

EpochMetrics Pretrainer::evaluate() const {
  NoGradGuard no_grad;
  Rng mask_rng(options_.valid_mask_seed);
  const ForwardMode mode{false, 0.0f, nullptr};
  double loss_sum = 0.0;
  std::size_t labeled = 0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < valid_.size(); start += options_.batch_size) {
    const std::size_t end = std::min(valid_.size(), start + options_.batch_size);
    std::vector<std::vector<int>> sentences(valid_.begin() + static_cast<std::ptrdiff_t>(start),
                                            valid_.begin() + static_cast<std::ptrdiff_t>(end));
    TokenBatch batch = make_token_batch(sentences, true);
    MaskedTokens masked;
    for (int attempt = 0; attempt < 100 && masked.selected == 0; ++attempt) {
      masked = mask_tokens(batch.ids, options_.masking, model_.config().vocab_size, mask_rng);
    }
    if (masked.selected == 0) continue;
    batch.ids = masked.corrupted;
    const MlmResult r = mlm_loss_and_accuracy(model_, batch, masked.labels, mode);
    loss_sum += static_cast<double>(r.loss.item()) * static_cast<double>(r.labeled);
    labeled += r.labeled;
    correct += r.correct;
  }
  if (labeled == 0) throw DataError("validation split has no maskable tokens");
  EpochMetrics m;
  m.epoch = epoch_;
  m.valid_loss = loss_sum / static_cast<double>(labeled);
  m.valid_accuracy = static_cast<double>(correct) / static_cast<double>(labeled);
  m.valid_perplexity = perplexity(m.valid_loss);
  return m;
}

void Pretrainer::snapshot_best() { best_ = clone_all(model_.parameters()); }

Checkpoint Pretrainer::save_state() const {
  Checkpoint ck;
  ck.kind = "lm-train";
  for (const auto& [k, v] : model_.config().to_map()) ck.meta["config." + k] = v;
  ck.meta["vocab_hash"] = model_.vocab_hash();
  ck.meta["epoch"] = std::to_string(epoch_);
  ck.meta["adam_steps"] = std::to_string(adam_.steps());
  ck.meta["rng"] = rng_state(rng_);
  ck.meta["best_epoch"] = std::to_string(best_epoch_);
  ck.meta["best_accuracy"] = format_number(best_accuracy_);
  std::string log;
  for (const auto& m : log_) {
    log += std::to_string(m.epoch) + " " + format_number(m.train_loss) + " " + format_number(m.valid_loss) + " " +
           format_number(m.valid_accuracy) + " " + format_number(m.valid_perplexity) + "\n";
  }
  ck.meta["log"] = log;
  ck.tensors = with_prefix("param.", model_.parameters());
  for (auto& t : adam_.export_state()) ck.tensors.push_back(std::move(t));
  for (auto& t : with_prefix("best.", best_)) ck.tensors.push_back(std::move(t));
  return ck;
}

void Pretrainer::load_state(const Checkpoint& ck) {
  if (ck.kind != "lm-train") throw IntegrityError("not an LM training-state checkpoint");
  if (ck.require_meta("vocab_hash") != model_.vocab_hash()) {
    throw ConfigError("training state was produced with a different vocabulary");
  }
  for (const auto& [k, v] : model_.config().to_map()) {
    if (ck.require_meta("config." + k) != v) {
      throw ConfigError("training state has " + k + " = " + ck.require_meta("config." + k) +
                        ", model has " + v);
    }
  }
  assign_parameters(model_.parameters(), ck.tensors_with_prefix("param."), "LM parameters");
  adam_.import_state(ck.tensors, parse_meta_u64(ck.require_meta("adam_steps")));
  restore_rng_state(rng_, ck.require_meta("rng"));
  epoch_ = parse_meta_u64(ck.require_meta("epoch"));
  best_epoch_ = parse_meta_u64(ck.require_meta("best_epoch"));
  best_accuracy_ = parse_meta_number(ck.require_meta("best_accuracy"));
  log_.clear();
  std::istringstream in(ck.require_meta("log"));
  std::string e, tl, vl, va, vp;
  while (in >> e >> tl >> vl >> va >> vp) {
    log_.push_back({parse_meta_u64(e), parse_meta_number(tl), parse_meta_number(vl), parse_meta_number(va), parse_meta_number(vp)});
  }
  best_.clear();
  for (const auto& p : ck.tensors_with_prefix("best.")) best_.push_back({p.name, p.tensor.clone()});
}

Checkpoint make_lm_checkpoint(const LmModel& model, const ParameterList& params,
                              const std::string& vocab_text) {
  Checkpoint ck;
  ck.kind = "lm";
  for (const auto& [k, v] : model.config().to_map()) ck.meta["config." + k] = v;
  ck.meta["vocab"] = vocab_text;
  ck.meta["vocab_hash"] = model.vocab_hash();
  ck.tensors = params;
  return ck;
}

LmModel load_lm(const Checkpoint& ck, std::string* vocab_text) {
  if (ck.kind != "lm") throw IntegrityError("expected an LM checkpoint, found '" + ck.kind + "'");
  std::map<std::string, std::string> values;
  for (const auto& [k, v] : ck.meta) {
    if (k.rfind("config.", 0) == 0) values[k.substr(7)] = v;
  }
  ConfigReader reader(values, "LM checkpoint");
  const LmConfig config = LmConfig::from_reader(reader);
  reader.finish();
  const std::string& vocab = ck.require_meta("vocab");
  if (Vocabulary::parse(vocab).hash() != ck.require_meta("vocab_hash")) {
    throw IntegrityError("LM checkpoint vocabulary does not match its recorded hash");
  }
  Rng unused(0);
  LmModel model(config, unused, ck.require_meta("vocab_hash"));
  assign_parameters(model.parameters(), ck.tensors, "LM checkpoint");
  if (vocab_text) *vocab_text = vocab;
  return model;
}

}  // namespace nmt::lm
