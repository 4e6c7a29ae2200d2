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

#include "nmt/pipeline.hpp"

#include <fstream>
#include <ostream>

#include "nmt/error.hpp"
#include "nmt/random.hpp"
#include "nmt/subword.hpp"
#include "nmt/textpipe.hpp"

namespace nmt {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kInitStream = 3;
constexpr std::uint64_t kValidMaskStream = 4;

void require_file(const std::string& key, const fs::path& path) {
  if (!fs::is_regular_file(path)) {
    throw IoError(key + ": no such file: " + path.string());
  }
}

std::uint64_t read_seed(ConfigReader& reader, std::optional<std::uint64_t> seed_override) {
  const std::uint64_t from_file = reader.get_u64("seed", 1);
  return seed_override ? *seed_override : from_file;
}

std::vector<std::vector<int>> encode_lines(const std::vector<std::string>& lines,
                                           const Vocabulary& vocab) {
  std::vector<std::vector<int>> out;
  out.reserve(lines.size());
  for (const auto& line : lines) out.push_back(vocab.encode(text::split_whitespace(line)));
  return out;
}

void fill_vocab_size(std::size_t& field, std::size_t actual, const char* key) {
  if (field != 0 && field != actual) {
    throw ConfigError(std::string(key) + " = " + std::to_string(field) +
                      " but the vocabulary file has " + std::to_string(actual) + " entries");
  }
  field = actual;
}

}  // namespace

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::string text;
  for (const auto& line : lines) {
    text += line;
    text.push_back('\n');
  }
  write_file_atomic(path, text);
}

TrainRun TrainRun::from_reader(ConfigReader& reader, std::optional<std::uint64_t> seed_override) {
  TrainRun run;
  run.seed = read_seed(reader, seed_override);
  run.model = ModelConfig::from_reader(reader, "model.");
  run.train = TrainConfig::from_reader(reader, "train.");
  run.train.seed = run.seed;
  run.train_source = reader.require_path("data.train_source");
  run.train_target = reader.require_path("data.train_target");
  run.dev_source = reader.require_path("data.dev_source");
  run.dev_target = reader.get_path("data.dev_target", {});
  run.dev_reference = reader.get_path("data.dev_reference", {});
  run.source_vocab = reader.require_path("data.source_vocab");
  run.target_vocab = reader.require_path("data.target_vocab");
  run.lm_checkpoint = reader.get_path("data.lm_checkpoint", {});
  run.train.checkpoint_dir = reader.require_path("train.checkpoint_dir");
  reader.finish();

  run.train.validate();
  if (run.dev_target.empty() && run.dev_reference.empty()) {
    throw ConfigError("one of data.dev_target or data.dev_reference is required");
  }
  if (run.model.provider == ProviderKind::frozen_lm && run.lm_checkpoint.empty()) {
    throw ConfigError("model.provider = frozen_lm requires data.lm_checkpoint");
  }
  if (run.model.provider == ProviderKind::lookup && !run.lm_checkpoint.empty()) {
    throw ConfigError("data.lm_checkpoint is only used with model.provider = frozen_lm");
  }
  require_file("data.train_source", run.train_source);
  require_file("data.train_target", run.train_target);
  require_file("data.dev_source", run.dev_source);
  if (!run.dev_target.empty()) require_file("data.dev_target", run.dev_target);
  if (!run.dev_reference.empty()) require_file("data.dev_reference", run.dev_reference);
  require_file("data.source_vocab", run.source_vocab);
  require_file("data.target_vocab", run.target_vocab);
  if (!run.lm_checkpoint.empty()) require_file("data.lm_checkpoint", run.lm_checkpoint);
  return run;
}

TrainRun TrainRun::load(const fs::path& config, std::optional<std::uint64_t> seed_override) {
  ConfigReader reader = ConfigReader::load(config);
  return from_reader(reader, seed_override);
}

TrainOutcome run_training(const TrainRun& run, const std::optional<fs::path>& resume,
                          std::ostream* progress, const StopPredicate& stop) {
  const Vocabulary source_vocab = Vocabulary::load(run.source_vocab.string());
  const Vocabulary target_vocab = Vocabulary::load(run.target_vocab.string());
  ModelConfig config = run.model;
  fill_vocab_size(config.src_vocab_size, source_vocab.size(), "model.src_vocab_size");
  fill_vocab_size(config.tgt_vocab_size, target_vocab.size(), "model.tgt_vocab_size");
  config.validate();

  std::shared_ptr<lm::LmModel> language_model;
  if (config.provider == ProviderKind::frozen_lm) {
    language_model = std::make_shared<lm::LmModel>(lm::load_lm(load_checkpoint(run.lm_checkpoint)));
    if (language_model->vocab_hash() != source_vocab.hash()) {
      throw ConfigError("LM checkpoint " + run.lm_checkpoint.string() +
                        " was trained on a different vocabulary than " + run.source_vocab.string());
    }
  }

  const auto train_source = read_lines(run.train_source);
  const auto train_target = read_lines(run.train_target);
  if (train_source.size() != train_target.size()) {
    throw DataError("training files have " + std::to_string(train_source.size()) + " and " +
                    std::to_string(train_target.size()) + " lines");
  }
  std::vector<IdPair> pairs;
  pairs.reserve(train_source.size());
  for (std::size_t i = 0; i < train_source.size(); ++i) {
    pairs.push_back({source_vocab.encode(text::split_whitespace(train_source[i])),
                     target_vocab.encode(text::split_whitespace(train_target[i]))});
  }

  DevSet dev;
  dev.source = encode_lines(read_lines(run.dev_source), source_vocab);
  if (!run.dev_reference.empty()) {
    for (const auto& line : read_lines(run.dev_reference)) {
      dev.references.push_back(text::split_whitespace(line));
    }
  } else {
    for (const auto& line : read_lines(run.dev_target)) {
      dev.references.push_back(bpe::remove_bpe(text::split_whitespace(line)));
    }
  }

  Rng init(derive_seed(run.seed, kInitStream, 0));
  Transformer model(config, init, language_model, source_vocab.hash());
  Trainer trainer(model, source_vocab, target_vocab, run.train, std::move(pairs), std::move(dev));
  if (resume) trainer.load_state(load_checkpoint(*resume));

  TrainOutcome outcome;
  outcome.parameters = model.parameter_count();
  ParameterList resize;
  if (language_model) {
    model.source_embeddings().resize().collect("resize", resize);
    outcome.lm_checksum_before = parameter_checksum(language_model->parameters());
    outcome.resize_checksum_before = parameter_checksum(resize);
  }
  trainer.train(progress, stop);
  if (language_model) {
    outcome.lm_checksum_after = parameter_checksum(language_model->parameters());
    outcome.resize_checksum_after = parameter_checksum(resize);
  }
  outcome.log = trainer.log();
  outcome.best_epoch = trainer.best_epoch();
  outcome.best_bleu = trainer.best_bleu();
  if (!run.train.checkpoint_dir.empty()) {
    outcome.best_checkpoint = Trainer::best_checkpoint(run.train.checkpoint_dir);
  }
  return outcome;
}

PretrainRun PretrainRun::from_reader(ConfigReader& reader,
                                     std::optional<std::uint64_t> seed_override) {
  PretrainRun run;
  run.seed = read_seed(reader, seed_override);
  run.lm = lm::LmConfig::from_reader(reader, "lm.");
  auto& o = run.options;
  o.epochs = reader.get_size("pretrain.epochs", o.epochs);
  o.batch_size = reader.get_size("pretrain.batch_size", o.batch_size);
  o.valid_fraction = reader.get_double("pretrain.valid_fraction", o.valid_fraction);
  o.adam.lr = static_cast<float>(reader.get_double("pretrain.lr", o.adam.lr));
  o.adam.warmup_steps = reader.get_u64("pretrain.warmup_steps", o.adam.warmup_steps);
  o.adam.weight_decay =
      static_cast<float>(reader.get_double("pretrain.weight_decay", o.adam.weight_decay));
  o.masking.mask_prob = reader.get_double("pretrain.mask_prob", o.masking.mask_prob);
  o.masking.replace_with_mask_prob =
      reader.get_double("pretrain.replace_with_mask_prob", o.masking.replace_with_mask_prob);
  o.masking.replace_with_random_prob =
      reader.get_double("pretrain.replace_with_random_prob", o.masking.replace_with_random_prob);
  o.masking.keep_prob = reader.get_double("pretrain.keep_prob", o.masking.keep_prob);
  o.seed = run.seed;
  o.valid_mask_seed = derive_seed(run.seed, kValidMaskStream, 0);
  run.corpus = reader.require_path("data.corpus");
  run.vocab = reader.require_path("data.vocab");
  run.output = reader.require_path("output.checkpoint");
  run.state = reader.get_path("output.state", fs::path(run.output.string() + ".state"));
  reader.finish();

  if (o.epochs == 0 || o.batch_size == 0) throw ConfigError("pretrain.epochs and pretrain.batch_size must be positive");
  if (!(o.valid_fraction > 0.0 && o.valid_fraction < 1.0)) {
    throw ConfigError("pretrain.valid_fraction must be in (0, 1)");
  }
  o.masking.validate();
  require_file("data.corpus", run.corpus);
  require_file("data.vocab", run.vocab);
  return run;
}

PretrainRun PretrainRun::load(const fs::path& config, std::optional<std::uint64_t> seed_override) {
  ConfigReader reader = ConfigReader::load(config);
  return from_reader(reader, seed_override);
}

PretrainOutcome run_pretraining(const PretrainRun& run, const std::optional<fs::path>& resume,
                                std::ostream* progress) {
  const Vocabulary vocab = Vocabulary::load(run.vocab.string());
  lm::LmConfig config = run.lm;
  fill_vocab_size(config.vocab_size, vocab.size(), "lm.vocab_size");
  config.validate();

  Rng init(derive_seed(run.seed, kInitStream, 0));
  lm::LmModel model(config, init, vocab.hash());
  lm::Pretrainer trainer(model, encode_lines(read_lines(run.corpus), vocab), run.options);
  if (resume) trainer.load_state(load_checkpoint(*resume));

  if (progress && trainer.epoch() == 0) *progress << "epoch\tvalid_loss\tvalid_accuracy\tvalid_perplexity\n";
  while (trainer.epoch() < run.options.epochs) {
    const lm::EpochMetrics m = trainer.run_epoch();
    save_checkpoint(run.state, trainer.save_state());
    if (progress) *progress << lm::format_epoch(m) << std::endl;
  }
  if (!run.output.parent_path().empty()) fs::create_directories(run.output.parent_path());
  save_checkpoint(run.output, lm::make_lm_checkpoint(model, trainer.best_parameters(), vocab.serialize()));

  PretrainOutcome outcome;
  outcome.log = trainer.log();
  outcome.best_epoch = trainer.best_epoch();
  outcome.uniform_perplexity = static_cast<double>(vocab.size());
  return outcome;
}

}  // namespace nmt
