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

#include <CLI11.hpp>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nmt/checkpoint.hpp"
#include "nmt/decoder.hpp"
#include "nmt/error.hpp"
#include "nmt/lm.hpp"
#include "nmt/metrics.hpp"
#include "nmt/pipeline.hpp"
#include "nmt/subword.hpp"
#include "nmt/textpipe.hpp"
#include "nmt/trainer.hpp"
#include "nmt/vocab.hpp"

namespace fs = std::filesystem;
using namespace nmt;

namespace {

constexpr int kExitData = 1;
constexpr int kExitUsage = 2;

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message) : Error("usage", message) {}
};

std::uint64_t parse_seed(const std::string& text, const std::string& origin) {
  std::uint64_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw UsageError(origin + " must be a non-negative integer, got '" + text + "'");
  }
  return value;
}

// --seed wins over the SEED environment variable, which wins over the config.
std::optional<std::uint64_t> seed_override(const std::optional<std::uint64_t>& flag) {
  if (flag) return flag;
  if (const char* env = std::getenv("SEED"); env != nullptr && *env != '\0') {
    return parse_seed(env, "SEED");
  }
  return std::nullopt;
}

std::vector<std::vector<std::string>> read_token_lines(const std::vector<std::string>& paths) {
  std::vector<std::vector<std::string>> out;
  for (const auto& path : paths) {
    for (const auto& line : read_lines(path)) out.push_back(text::split_whitespace(line));
  }
  return out;
}

fs::path resolve_checkpoint(const fs::path& path) {
  return fs::is_directory(path) ? Trainer::best_checkpoint(path) : path;
}

// ---------------------------------------------------------------------------

struct PreprocessArgs {
  std::string source, target, source_out, target_out, report;
  std::size_t max_len = 80;
  double max_ratio = 1.5;
  std::string unit = "tokens";
};

int run_preprocess(const PreprocessArgs& a) {
  text::CleanOptions options;
  options.max_len = a.max_len;
  options.max_ratio = a.max_ratio;
  if (a.unit == "tokens") {
    options.unit = text::LengthUnit::tokens;
  } else if (a.unit == "words") {
    options.unit = text::LengthUnit::words;
  } else {
    throw UsageError("--length-unit must be 'tokens' or 'words'");
  }

  const auto source = read_lines(a.source);
  if (a.target.empty()) {
    if (!a.target_out.empty()) throw UsageError("--target-out needs --target");
    std::vector<std::string> out;
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < source.size(); ++i) {
      const auto tokens = text::tokenize(text::normalize(source[i], i + 1));
      if (tokens.empty() || tokens.size() > options.max_len) {
        ++dropped;
        continue;
      }
      out.push_back(text::join(tokens));
    }
    write_lines(a.source_out, out);
    const std::string report = "input_lines:" + std::to_string(source.size()) +
                               "\nkept_lines:" + std::to_string(out.size()) +
                               "\ndropped_lines:" + std::to_string(dropped) + "\n";
    std::cout << report;
    if (!a.report.empty()) write_file_atomic(a.report, report);
    return 0;
  }

  if (a.target_out.empty()) throw UsageError("--target needs --target-out");
  const auto target = read_lines(a.target);
  const auto result = text::preprocess_corpus(source, target, options);
  std::vector<std::string> src_out, tgt_out;
  for (const auto& pair : result.kept) {
    src_out.push_back(text::join(pair.source));
    tgt_out.push_back(text::join(pair.target));
  }
  write_lines(a.source_out, src_out);
  write_lines(a.target_out, tgt_out);
  std::cout << result.report.format();
  if (!a.report.empty()) write_file_atomic(a.report, result.report.format());
  return 0;
}

int run_bpe_learn(const std::vector<std::string>& inputs, std::size_t merges,
                  const std::string& output) {
  std::vector<std::string> tokens;
  for (auto& line : read_token_lines(inputs)) {
    for (auto& t : line) tokens.push_back(std::move(t));
  }
  const bpe::SubwordModel model = bpe::learn_bpe(tokens, merges);
  write_file_atomic(output, model.serialize());
  std::cout << "merges:" << model.size() << "\n";
  return 0;
}

int run_bpe_apply(const std::string& merges, const std::string& input, const std::string& output) {
  const bpe::SubwordModel model = bpe::SubwordModel::load(merges);
  std::vector<std::string> out;
  for (const auto& line : read_lines(input)) {
    out.push_back(text::join(bpe::apply_bpe_tokens(text::split_whitespace(line), model)));
  }
  write_lines(output, out);
  return 0;
}

int run_build_vocab(const std::vector<std::string>& inputs, std::size_t size,
                    const std::string& output) {
  const Vocabulary vocab = Vocabulary::build(read_token_lines(inputs), size);
  write_file_atomic(output, vocab.serialize());
  std::cout << "size:" << vocab.size() << "\nhash:" << vocab.hash() << "\n";
  return 0;
}

int run_pretrain(const std::string& config, const std::string& resume,
                 const std::optional<std::uint64_t>& seed) {
  const PretrainRun run = PretrainRun::load(config, seed_override(seed));
  std::optional<fs::path> from;
  if (!resume.empty()) from = resume;
  const PretrainOutcome outcome = run_pretraining(run, from, &std::cout);
  const auto& best = outcome.log.at(outcome.best_epoch - 1);
  std::cout << "best_epoch:" << outcome.best_epoch << "\nbest_valid_perplexity:"
            << best.valid_perplexity << "\nuniform_perplexity:" << outcome.uniform_perplexity
            << "\ncheckpoint:" << run.output.string() << "\n";
  return 0;
}

int run_train(const std::string& config, const std::string& resume,
              const std::optional<std::uint64_t>& seed) {
  const TrainRun run = TrainRun::load(config, seed_override(seed));
  std::optional<fs::path> from;
  if (!resume.empty()) from = resume;
  const TrainOutcome outcome = run_training(run, from, &std::cout);
  std::cout << "best_epoch:" << outcome.best_epoch << "\nbest_dev_bleu:" << outcome.best_bleu
            << "\nbest_checkpoint:" << outcome.best_checkpoint.string() << "\n";
  return 0;
}

struct TranslateArgs {
  std::string model, input, output;
  std::size_t beam = 12;
  std::size_t nbest = 1;
  std::size_t max_len = 0;
  double length_penalty = 0.0;
  bool no_detok = false;
};

int run_translate(const TranslateArgs& a) {
  if (a.beam == 0) throw UsageError("--beam must be at least 1");
  if (a.nbest == 0 || a.nbest > a.beam) throw UsageError("--nbest must be between 1 and --beam");
  const TranslationModel bundle = load_translation_model(load_checkpoint(resolve_checkpoint(a.model)));
  TranslateOptions options;
  options.beam.beam_size = a.beam;
  options.beam.nbest = a.nbest;
  options.beam.max_len = a.max_len;
  options.beam.length_penalty = a.length_penalty;
  options.detokenize = !a.no_detok;
  TranslationStats stats;
  const auto lines = read_lines(a.input);
  const auto out = translate_corpus(*bundle.model, bundle.source_vocab, bundle.target_vocab, lines,
                                    options, &stats, &std::cerr);
  write_lines(a.output, out);
  std::cerr << "translated:" << stats.lines << " failed:" << stats.failed
            << " truncated:" << stats.truncated << "\n";
  return 0;
}

int run_evaluate(const std::string& hyp, const std::string& ref, bool lowercase, bool smooth) {
  BleuOptions options;
  options.lowercase = lowercase;
  options.smooth = smooth;
  const auto hyps = read_token_lines({hyp});
  const auto refs = read_token_lines({ref});
  std::cout << format_bleu(bleu(hyps, refs, options)) << "\n";
  return 0;
}

std::string shape_text(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.rank(); ++i) s += (i ? ", " : "") + std::to_string(t.dim(i));
  return s + "]";
}

std::size_t count_prefix(const Checkpoint& ck, const std::string& prefix) {
  return count_elements(ck.tensors_with_prefix(prefix));
}

template <typename Config>
Config config_from_meta(const Checkpoint& ck, const std::string& prefix) {
  std::map<std::string, std::string> values;
  for (const auto& [k, v] : ck.meta) {
    if (k.rfind(prefix, 0) == 0 && k.find('.', prefix.size()) == std::string::npos) {
      values[k.substr(prefix.size())] = v;
    }
  }
  ConfigReader reader(values, "checkpoint");
  Config c = Config::from_reader(reader);
  reader.finish();
  return c;
}

int run_inspect(const std::string& path) {
  const fs::path file = resolve_checkpoint(path);
  const Checkpoint ck = load_checkpoint(file);
  std::cout << "file: " << file.string() << "\nkind: " << ck.kind << "\nversion: "
            << kCheckpointVersion << "\n";
  for (const auto& [k, v] : ck.meta) {
    if (v.find('\n') == std::string::npos) {
      std::cout << "meta " << k << " = " << v << "\n";
    } else {
      std::cout << "meta " << k << " = <" << std::count(v.begin(), v.end(), '\n') << " lines>\n";
    }
  }
  for (const auto& t : ck.tensors) {
    std::cout << "tensor " << t.name << " " << shape_text(t.tensor) << "\n";
  }

  std::size_t trainable = 0, total = 0;
  std::optional<ParameterCount> formula;
  if (ck.kind == "mt") {
    trainable = count_prefix(ck, "param.");
    total = trainable + count_prefix(ck, "lm.");
    const ModelConfig mc = config_from_meta<ModelConfig>(ck, "config.");
    std::optional<lm::LmConfig> lc;
    if (mc.provider == ProviderKind::frozen_lm) lc = config_from_meta<lm::LmConfig>(ck, "lm.config.");
    formula = Transformer::formula_parameter_count(mc, lc ? &*lc : nullptr);
  } else if (ck.kind == "lm" || ck.kind == "lm-train") {
    trainable = total = ck.kind == "lm" ? count_elements(ck.tensors) : count_prefix(ck, "param.");
    const lm::LmConfig lc = config_from_meta<lm::LmConfig>(ck, "config.");
    const std::size_t n = lm::LmModel::formula_parameter_count(lc);
    formula = ParameterCount{n, n};
  } else {
    trainable = total = count_elements(ck.tensors);
  }
  std::cout << "parameters: trainable " << trainable << ", total " << total << "\n";
  if (formula) {
    const bool match = formula->trainable == trainable && formula->total == total;
    std::cout << "formula: trainable " << formula->trainable << ", total " << formula->total
              << (match ? " (match)" : " (MISMATCH)") << "\n";
    if (!match) throw IntegrityError("tensor table does not match the configuration's parameter count");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer machine translation with optional frozen language-model embeddings",
               "nmt"};
  app.require_subcommand(1);
  std::size_t threads = 1;

  PreprocessArgs pre;
  auto* preprocess = app.add_subcommand("preprocess", "Normalize, tokenize and length-filter a corpus");
  preprocess->add_option("--source", pre.source, "Raw source (or monolingual) text")->required();
  preprocess->add_option("--target", pre.target, "Raw target text (parallel mode)");
  preprocess->add_option("--source-out", pre.source_out, "Tokenized source output")->required();
  preprocess->add_option("--target-out", pre.target_out, "Tokenized target output");
  preprocess->add_option("--max-len", pre.max_len, "Maximum sentence length")->capture_default_str();
  preprocess->add_option("--max-ratio", pre.max_ratio, "Maximum length ratio")->capture_default_str();
  preprocess->add_option("--length-unit", pre.unit, "tokens or words")->capture_default_str();
  preprocess->add_option("--report", pre.report, "Also write the filter report here");

  std::vector<std::string> bpe_inputs;
  std::size_t bpe_merges = 0;
  std::string bpe_output;
  auto* bpe_learn = app.add_subcommand("bpe-learn", "Learn BPE merges from tokenized text");
  bpe_learn->add_option("--input", bpe_inputs, "Tokenized text files")->required();
  bpe_learn->add_option("--merges", bpe_merges, "Number of merge operations")->required();
  bpe_learn->add_option("--output", bpe_output, "Merge file")->required();

  std::string apply_merges, apply_input, apply_output;
  auto* bpe_apply = app.add_subcommand("bpe-apply", "Segment tokenized text with learned merges");
  bpe_apply->add_option("--merges", apply_merges, "Merge file")->required();
  bpe_apply->add_option("--input", apply_input, "Tokenized text")->required();
  bpe_apply->add_option("--output", apply_output, "Segmented text")->required();

  std::vector<std::string> vocab_inputs;
  std::size_t vocab_size = 0;
  std::string vocab_output;
  auto* build_vocab = app.add_subcommand("build-vocab", "Build a frequency-ranked vocabulary");
  build_vocab->add_option("--input", vocab_inputs, "Segmented text files")->required();
  build_vocab->add_option("--size", vocab_size, "Size budget including special symbols")->required();
  build_vocab->add_option("--output", vocab_output, "Vocabulary file")->required();

  std::string lm_config, lm_resume;
  std::optional<std::uint64_t> lm_seed;
  auto* pretrain = app.add_subcommand("pretrain-lm", "Pretrain a masked language model");
  pretrain->add_option("--config", lm_config, "Run configuration")->required();
  pretrain->add_option("--resume", lm_resume, "Training-state checkpoint to resume from");
  pretrain->add_option("--seed", lm_seed, "Overrides the config and SEED");
  pretrain->add_option("--threads", threads, "Maximum worker threads")->check(CLI::PositiveNumber);

  std::string train_config, train_resume;
  std::optional<std::uint64_t> train_seed;
  auto* train = app.add_subcommand("train", "Train a translation model");
  train->add_option("--config", train_config, "Run configuration")->required();
  train->add_option("--resume", train_resume, "MT checkpoint to resume from");
  train->add_option("--seed", train_seed, "Overrides the config and SEED");
  train->add_option("--threads", threads, "Maximum worker threads")->check(CLI::PositiveNumber);

  TranslateArgs tr;
  auto* translate = app.add_subcommand("translate", "Translate BPE-segmented source text");
  translate->add_option("--model", tr.model, "MT checkpoint or checkpoint directory")->required();
  translate->add_option("--input", tr.input, "Segmented source, one sentence per line")->required();
  translate->add_option("--output", tr.output, "Translations")->required();
  translate->add_option("--beam", tr.beam, "Beam size")->capture_default_str();
  translate->add_option("--nbest", tr.nbest, "Hypotheses per sentence")->capture_default_str();
  translate->add_option("--max-len", tr.max_len, "Output length limit (0: 2*source+10)");
  translate->add_option("--length-penalty", tr.length_penalty, "Length normalization exponent");
  translate->add_flag("--no-detok", tr.no_detok, "Keep tokenized output");
  translate->add_option("--threads", threads, "Maximum worker threads")->check(CLI::PositiveNumber);

  std::string eval_hyp, eval_ref;
  bool eval_lc = false, eval_smooth = false;
  auto* evaluate = app.add_subcommand("evaluate", "Corpus BLEU of tokenized hypotheses");
  evaluate->add_option("--hyp", eval_hyp, "Hypotheses")->required();
  evaluate->add_option("--ref", eval_ref, "References")->required();
  evaluate->add_flag("--lc", eval_lc, "Lowercase both sides");
  evaluate->add_flag("--smooth", eval_smooth, "Add-one smoothing for n > 1");

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect-checkpoint", "Print a checkpoint's metadata and tensors");
  inspect->add_option("path", inspect_path, "Checkpoint file or training directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*preprocess) return run_preprocess(pre);
    if (*bpe_learn) return run_bpe_learn(bpe_inputs, bpe_merges, bpe_output);
    if (*bpe_apply) return run_bpe_apply(apply_merges, apply_input, apply_output);
    if (*build_vocab) return run_build_vocab(vocab_inputs, vocab_size, vocab_output);
    if (*pretrain) return run_pretrain(lm_config, lm_resume, lm_seed);
    if (*train) return run_train(train_config, train_resume, train_seed);
    if (*translate) return run_translate(tr);
    if (*evaluate) return run_evaluate(eval_hyp, eval_ref, eval_lc, eval_smooth);
    if (*inspect) return run_inspect(inspect_path);
  } catch (const Error& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    const bool usage = e.category() == "usage" || e.category() == "config";
    return usage ? kExitUsage : kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
