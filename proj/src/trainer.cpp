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

#include "nmt/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "nmt/decoder.hpp"
#include "nmt/error.hpp"
#include "nmt/ops.hpp"
#include "nmt/random.hpp"
#include "nmt/textpipe.hpp"

namespace nmt {

namespace {

constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kDropoutStream = 2;
constexpr const char* kLogFile = "train.log";
constexpr const char* kBestFile = "best";

ParameterList with_prefix(const std::string& prefix, const ParameterList& params) {
  ParameterList out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({prefix + p.name, p.tensor});
  return out;
}

void append(ParameterList& to, ParameterList from) {
  for (auto& p : from) to.push_back(std::move(p));
}

std::map<std::string, std::string> meta_with_prefix(const Checkpoint& ck, const std::string& prefix) {
  std::map<std::string, std::string> values;
  for (const auto& [k, v] : ck.meta) {
    if (k.rfind(prefix, 0) == 0) values[k.substr(prefix.size())] = v;
  }
  return values;
}

std::size_t target_tokens(const TargetBatch& batch) {
  std::size_t n = 0;
  for (int t : batch.targets) n += t != kPadId;
  return n;
}

void check_ids(const std::vector<int>& ids, std::size_t vocab, const char* side, std::size_t line) {
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw DataError(std::string(side) + " sentence " + std::to_string(line) + ": id " +
                      std::to_string(id) + " outside vocabulary of size " + std::to_string(vocab));
    }
  }
}

void check_length(const std::vector<int>& ids, std::size_t max_positions, const char* side,
                  std::size_t line) {
  if (ids.size() + 1 > max_positions) {
    throw DataError(std::string(side) + " sentence " + std::to_string(line) + " has " +
                    std::to_string(ids.size()) + " tokens; max_positions " +
                    std::to_string(max_positions) + " allows " + std::to_string(max_positions - 1));
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_sentences == 0) throw ConfigError("batch_sentences must be at least 1");
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (dev_beam == 0) throw ConfigError("dev_beam must be at least 1");
  if (!(label_smoothing >= 0.0f && label_smoothing < 1.0f)) {
    throw ConfigError("label_smoothing must be in [0, 1)");
  }
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite non-negative number");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be non-negative");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {{"batch_sentences", std::to_string(batch_sentences)},
          {"epochs", std::to_string(epochs)},
          {"label_smoothing", format_number(label_smoothing)},
          {"lr", format_number(lr)},
          {"seed", std::to_string(seed)},
          {"dev_beam", std::to_string(dev_beam)},
          {"clip_norm", format_number(clip_norm)},
          {"keep_all_checkpoints", keep_all_checkpoints ? "true" : "false"}};
}

TrainConfig TrainConfig::from_reader(ConfigReader& reader, const std::string& prefix) {
  TrainConfig c;
  c.batch_sentences = reader.get_size(prefix + "batch_sentences", c.batch_sentences);
  c.epochs = reader.get_size(prefix + "epochs", c.epochs);
  c.label_smoothing =
      static_cast<float>(reader.get_double(prefix + "label_smoothing", c.label_smoothing));
  c.lr = reader.get_double(prefix + "lr", c.lr);
  c.dev_beam = reader.get_size(prefix + "dev_beam", c.dev_beam);
  c.clip_norm = reader.get_double(prefix + "clip_norm", c.clip_norm);
  c.keep_all_checkpoints = reader.get_bool(prefix + "keep_all_checkpoints", c.keep_all_checkpoints);
  c.checkpoint_dir = reader.get_path(prefix + "checkpoint_dir", c.checkpoint_dir);
  return c;
}

std::vector<Batch> make_batches(std::span<const IdPair> pairs, std::size_t batch_sentences,
                                std::uint64_t seed) {
  if (pairs.empty()) throw DataError("cannot batch an empty corpus");
  if (batch_sentences == 0) throw ConfigError("batch_sentences must be at least 1");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  shuffle_range(order.begin(), order.end(), rng);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_sentences) {
    const std::size_t end = std::min(order.size(), start + batch_sentences);
    Batch b;
    std::vector<std::vector<int>> sources;
    std::vector<std::vector<int>> targets;
    for (std::size_t i = start; i < end; ++i) {
      b.indices.push_back(order[i]);
      sources.push_back(pairs[order[i]].source);
      targets.push_back(pairs[order[i]].target);
    }
    b.source = make_token_batch(sources, /*append_eos=*/true);
    b.target = make_target_batch(targets);
    batches.push_back(std::move(b));
  }
  return batches;
}

std::string format_log_header() {
  return "epoch\ttrain_loss\tdev_bleu\tdev_bleu_lc\tis_best\twall_seconds";
}

std::string format_log_entry(const TrainLogEntry& e) {
  char buffer[160];
  std::snprintf(buffer, sizeof buffer, "%zu\t%.6f\t%.2f\t%.2f\t%d\t%.3f", e.epoch, e.train_loss,
                e.dev_bleu, e.dev_bleu_lc, e.is_best ? 1 : 0, e.wall_seconds);
  return buffer;
}

TranslationModel load_translation_model(const Checkpoint& ck) {
  if (ck.kind != "mt") throw IntegrityError("expected an MT checkpoint, found '" + ck.kind + "'");
  TranslationModel out;
  {
    ConfigReader reader(meta_with_prefix(ck, "config."), "MT checkpoint");
    out.config = ModelConfig::from_reader(reader);
    reader.finish();
  }
  out.source_vocab = Vocabulary::parse(ck.require_meta("source_vocab"));
  out.target_vocab = Vocabulary::parse(ck.require_meta("target_vocab"));
  if (out.source_vocab.hash() != ck.require_meta("source_vocab_hash") ||
      out.target_vocab.hash() != ck.require_meta("target_vocab_hash")) {
    throw IntegrityError("MT checkpoint vocabularies do not match their recorded hashes");
  }
  Rng unused(0);
  if (out.config.provider == ProviderKind::frozen_lm) {
    ConfigReader reader(meta_with_prefix(ck, "lm.config."), "MT checkpoint LM");
    const lm::LmConfig lm_config = lm::LmConfig::from_reader(reader);
    reader.finish();
    out.lm = std::make_shared<lm::LmModel>(lm_config, unused, ck.require_meta("lm.vocab_hash"));
    assign_parameters(out.lm->parameters(), ck.tensors_with_prefix("lm."), "frozen LM");
  }
  out.model = std::make_unique<Transformer>(out.config, unused, out.lm, out.source_vocab.hash());
  assign_parameters(out.model->parameters(), ck.tensors_with_prefix("param."), "MT parameters");
  return out;
}

Trainer::Trainer(Transformer& model, const Vocabulary& source_vocab,
                 const Vocabulary& target_vocab, TrainConfig config, std::vector<IdPair> train,
                 DevSet dev)
    : model_(model),
      source_vocab_(source_vocab),
      target_vocab_(target_vocab),
      config_(std::move(config)),
      train_(std::move(train)),
      dev_(std::move(dev)),
      adam_(model.parameters(), AdamConfig{static_cast<float>(config_.lr)}) {
  config_.validate();
  const ModelConfig& mc = model_.config();
  if (source_vocab_.size() != mc.src_vocab_size || target_vocab_.size() != mc.tgt_vocab_size) {
    throw ConfigError("vocabulary sizes " + std::to_string(source_vocab_.size()) + "/" +
                      std::to_string(target_vocab_.size()) + " do not match the model's " +
                      std::to_string(mc.src_vocab_size) + "/" + std::to_string(mc.tgt_vocab_size));
  }
  if (mc.provider == ProviderKind::frozen_lm &&
      model_.source_embeddings().language_model()->vocab_hash() != source_vocab_.hash()) {
    throw ConfigError("frozen LM vocabulary does not match the source vocabulary");
  }
  if (train_.empty()) throw DataError("training corpus is empty");
  if (dev_.source.empty()) throw DataError("development corpus is empty");
  if (dev_.source.size() != dev_.references.size()) {
    throw DataError("development corpus has " + std::to_string(dev_.source.size()) +
                    " sources but " + std::to_string(dev_.references.size()) + " references");
  }
  for (std::size_t i = 0; i < train_.size(); ++i) {
    check_ids(train_[i].source, mc.src_vocab_size, "training source", i + 1);
    check_ids(train_[i].target, mc.tgt_vocab_size, "training target", i + 1);
    check_length(train_[i].source, mc.max_positions, "training source", i + 1);
    check_length(train_[i].target, mc.max_positions, "training target", i + 1);
  }
  for (std::size_t i = 0; i < dev_.source.size(); ++i) {
    check_ids(dev_.source[i], mc.src_vocab_size, "dev source", i + 1);
    check_length(dev_.source[i], mc.max_positions, "dev source", i + 1);
  }
}

std::vector<std::vector<std::string>> Trainer::translate_dev() const {
  BeamOptions options;
  options.beam_size = config_.dev_beam;
  std::vector<std::vector<std::string>> out;
  out.reserve(dev_.source.size());
  for (const auto& src : dev_.source) {
    const BeamResult r = translate_ids(model_, src, options);
    out.push_back(text::split_whitespace(render_translation(target_vocab_, r.best().output(), false)));
  }
  return out;
}

BleuReport Trainer::evaluate_dev(bool lowercase) const {
  BleuOptions options;
  options.lowercase = lowercase;
  return bleu(translate_dev(), dev_.references, options);
}

TrainLogEntry Trainer::run_epoch() {
  const auto started = std::chrono::steady_clock::now();
  const std::size_t number = epoch_ + 1;
  const auto batches = make_batches(train_, config_.batch_sentences,
                                    derive_seed(config_.seed, kShuffleStream, number));
  Rng dropout_rng(derive_seed(config_.seed, kDropoutStream, number));
  const ForwardMode mode{true, model_.config().dropout, &dropout_rng};

  double loss_sum = 0.0;
  std::size_t token_count = 0;
  ParameterList params = model_.parameters();
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const Tensor loss = model_.loss(batches[b].source, batches[b].target, config_.label_smoothing, mode);
    if (!std::isfinite(loss.item())) {
      throw NumericError("epoch " + std::to_string(number) + ", batch " + std::to_string(b + 1) +
                         ": non-finite training loss; parameters left at the last update");
    }
    loss.backward();
    if (config_.clip_norm > 0.0) clip_grad_norm(params, config_.clip_norm);
    adam_.step();
    adam_.zero_grad();
    const std::size_t n = target_tokens(batches[b].target);
    loss_sum += static_cast<double>(loss.item()) * static_cast<double>(n);
    token_count += n;
  }

  TrainLogEntry entry;
  entry.epoch = number;
  entry.train_loss = token_count ? loss_sum / static_cast<double>(token_count) : 0.0;
  try {
    const auto hyps = translate_dev();
    entry.dev_bleu = bleu(hyps, dev_.references).bleu;
    BleuOptions lc;
    lc.lowercase = true;
    entry.dev_bleu_lc = bleu(hyps, dev_.references, lc).bleu;
  } catch (const Error& e) {
    throw DataError("epoch " + std::to_string(number) + ": dev BLEU failed: " + e.what());
  }
  epoch_ = number;
  const std::size_t previous_best = best_epoch_;
  if (entry.dev_bleu > best_bleu_) {
    best_bleu_ = entry.dev_bleu;
    best_epoch_ = number;
    entry.is_best = true;
  }
  entry.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  log_.push_back(entry);
  if (!config_.checkpoint_dir.empty()) write_outputs(entry, previous_best);
  return entry;
}

void Trainer::train(std::ostream* progress, const StopPredicate& stop) {
  if (progress && epoch_ == 0) *progress << format_log_header() << "\n";
  while (epoch_ < config_.epochs) {
    const TrainLogEntry entry = run_epoch();
    if (progress) *progress << format_log_entry(entry) << std::endl;
    if (stop && stop(entry)) break;
  }
}

std::vector<TrainLogEntry> Trainer::log() const {
  std::vector<TrainLogEntry> out = log_;
  for (auto& e : out) e.is_best = e.epoch == best_epoch_;
  return out;
}

std::filesystem::path Trainer::checkpoint_path(const std::filesystem::path& dir, std::size_t epoch) {
  return dir / ("epoch-" + std::to_string(epoch));
}

std::filesystem::path Trainer::best_checkpoint(const std::filesystem::path& dir) {
  std::string name = read_file(dir / kBestFile);
  while (!name.empty() && (name.back() == '\n' || name.back() == '\r')) name.pop_back();
  if (name.empty() || name.find('/') != std::string::npos) {
    throw IntegrityError("malformed best-checkpoint record in " + dir.string());
  }
  return dir / name;
}

void Trainer::write_outputs(const TrainLogEntry& entry, std::size_t superseded_best) {
  const auto& dir = config_.checkpoint_dir;
  std::filesystem::create_directories(dir);
  save_checkpoint(checkpoint_path(dir, entry.epoch), save_state());
  if (entry.is_best) {
    write_file_atomic(dir / kBestFile, "epoch-" + std::to_string(entry.epoch) + "\n");
  }
  if (!config_.keep_all_checkpoints) {
    // Only the newest and the best checkpoint are kept.
    for (std::size_t old : {entry.epoch - 1, superseded_best}) {
      if (old != 0 && old != entry.epoch && old != best_epoch_) {
        std::filesystem::remove(checkpoint_path(dir, old));
      }
    }
  }
  std::string text = format_log_header() + "\n";
  for (const auto& e : log()) text += format_log_entry(e) + "\n";
  write_file_atomic(dir / kLogFile, text);
}

Checkpoint Trainer::save_state() const {
  Checkpoint ck;
  ck.kind = "mt";
  for (const auto& [k, v] : model_.config().to_map()) ck.meta["config." + k] = v;
  for (const auto& [k, v] : config_.to_map()) ck.meta["train." + k] = v;
  ck.meta["source_vocab"] = source_vocab_.serialize();
  ck.meta["target_vocab"] = target_vocab_.serialize();
  ck.meta["source_vocab_hash"] = source_vocab_.hash();
  ck.meta["target_vocab_hash"] = target_vocab_.hash();
  if (const auto& lm = model_.source_embeddings().language_model()) {
    for (const auto& [k, v] : lm->config().to_map()) ck.meta["lm.config." + k] = v;
    ck.meta["lm.vocab_hash"] = lm->vocab_hash();
  }
  ck.meta["epoch"] = std::to_string(epoch_);
  ck.meta["adam_steps"] = std::to_string(adam_.steps());
  ck.meta["best_epoch"] = std::to_string(best_epoch_);
  ck.meta["best_bleu"] = format_number(best_bleu_);
  std::string log;
  for (const auto& e : log_) {
    log += std::to_string(e.epoch) + " " + format_number(e.train_loss) + " " +
           format_number(e.dev_bleu) + " " + format_number(e.dev_bleu_lc) + "\n";
  }
  ck.meta["log"] = log;
  ck.tensors = with_prefix("param.", model_.parameters());
  append(ck.tensors, model_.frozen_parameters());
  append(ck.tensors, adam_.export_state());
  return ck;
}

void Trainer::load_state(const Checkpoint& ck) {
  if (ck.kind != "mt") throw IntegrityError("expected an MT checkpoint, found '" + ck.kind + "'");
  for (const auto& [k, v] : model_.config().to_map()) {
    const std::string& stored = ck.require_meta("config." + k);
    if (stored != v) {
      throw ConfigError("checkpoint has " + k + " = " + stored + ", configuration has " + v);
    }
  }
  if (ck.require_meta("source_vocab_hash") != source_vocab_.hash() ||
      ck.require_meta("target_vocab_hash") != target_vocab_.hash()) {
    throw ConfigError("checkpoint was trained with different vocabularies");
  }
  const ParameterList frozen = model_.frozen_parameters();
  if (!frozen.empty()) {
    ParameterList stored;
    for (const auto& p : frozen) stored.push_back({p.name, ck.require_tensor(p.name)});
    if (parameter_checksum(stored) != parameter_checksum(frozen)) {
      throw ConfigError("checkpoint was trained with a different frozen LM");
    }
  }
  assign_parameters(model_.parameters(), ck.tensors_with_prefix("param."), "MT parameters");
  adam_.import_state(ck.tensors, parse_meta_u64(ck.require_meta("adam_steps")));
  epoch_ = parse_meta_u64(ck.require_meta("epoch"));
  best_epoch_ = parse_meta_u64(ck.require_meta("best_epoch"));
  best_bleu_ = parse_meta_number(ck.require_meta("best_bleu"));

  std::map<std::size_t, double> wall;
  if (!config_.checkpoint_dir.empty() && std::filesystem::exists(config_.checkpoint_dir / kLogFile)) {
    std::istringstream in(read_file(config_.checkpoint_dir / kLogFile));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::istringstream fields(line);
      std::size_t epoch = 0;
      std::string skip;
      double seconds = 0.0;
      if (fields >> epoch >> skip >> skip >> skip >> skip >> seconds) wall[epoch] = seconds;
    }
  }
  log_.clear();
  std::istringstream in(ck.require_meta("log"));
  std::string e, loss, b, blc;
  while (in >> e >> loss >> b >> blc) {
    TrainLogEntry entry;
    entry.epoch = parse_meta_u64(e);
    entry.train_loss = parse_meta_number(loss);
    entry.dev_bleu = parse_meta_number(b);
    entry.dev_bleu_lc = parse_meta_number(blc);
    const auto it = wall.find(entry.epoch);
    if (it != wall.end()) entry.wall_seconds = it->second;
    log_.push_back(entry);
  }
  if (log_.size() != epoch_) throw IntegrityError("checkpoint log does not cover its epochs");
}

}  // namespace nmt
