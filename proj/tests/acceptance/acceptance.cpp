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

// Acceptance checks: one PASS/FAIL line per criterion.
//
//   acceptance [--only N,...] [--expect-fail N,...] [--work-dir DIR] [--keep]
//
// Exit status is 0 when the set of failing criteria equals --expect-fail.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "nmt/batch.hpp"
#include "nmt/checkpoint.hpp"
#include "nmt/config.hpp"
#include "nmt/decoder.hpp"
#include "nmt/lm.hpp"
#include "nmt/metrics.hpp"
#include "nmt/model.hpp"
#include "nmt/ops.hpp"
#include "nmt/pipeline.hpp"
#include "nmt/subword.hpp"
#include "nmt/textpipe.hpp"
#include "nmt/trainer.hpp"
#include "nmt/utf8.hpp"
#include "support/beam_oracle.hpp"
#include "support/bpe_oracle.hpp"
#include "support/data.hpp"
#include "support/gradcheck.hpp"
#include "support/op_suite.hpp"
#include "support/toy.hpp"

namespace fs = std::filesystem;
using namespace nmt;
using namespace nmt::testing;

namespace {

using Clock = std::chrono::steady_clock;

const ForwardMode kEval{false, 0.0f, nullptr};

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, value);
  return buf;
}

fs::path g_work;
const fs::path kConfigDir = NMT_CONFIG_DIR;

// Loads a bundled config with some keys replaced.
ConfigReader bundled_config(const std::string& name,
                            const std::map<std::string, std::string>& overrides) {
  ConfigReader reader = ConfigReader::load(kConfigDir / name);
  for (const auto& [k, v] : overrides) reader.set(k, v);
  return reader;
}

TrainRun train_run(const std::string& name, const std::map<std::string, std::string>& overrides) {
  ConfigReader reader = bundled_config(name, overrides);
  return TrainRun::from_reader(reader, std::nullopt);
}

PretrainRun pretrain_run(const std::string& name,
                         const std::map<std::string, std::string>& overrides) {
  ConfigReader reader = bundled_config(name, overrides);
  return PretrainRun::from_reader(reader, std::nullopt);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// train.log without the wall-clock column.
std::string log_without_time(const fs::path& path) {
  std::istringstream in(slurp(path));
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind('\t')) + "\n";
  return out;
}

TrainLogEntry run_until(const TrainRun& run, double target, TrainOutcome* outcome) {
  *outcome = run_training(run, std::nullopt, nullptr,
                          [target](const TrainLogEntry& e) { return e.dev_bleu >= target; });
  TrainLogEntry best;
  for (const auto& e : outcome->log) {
    if (e.epoch == outcome->best_epoch) best = e;
  }
  return best;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto start = Clock::now();
  double worst_op = 0.0, worst_model = 0.0;
  std::string worst_name;
  std::size_t op_checks = 0, skipped = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    Rng sampler(seed + 1000);
    check_every_op(rng, sampler, 2e-3, [&](const char* name, const GradCheckResult& r) {
      ++op_checks;
      skipped += r.skipped_kinks;
      if (r.relative_error >= worst_op) {
        worst_op = r.relative_error;
        worst_name = name;
      }
    });
  }
  std::size_t model_coords = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed + 5000);
    Transformer model(micro_config(), rng);
    const auto src_sentences = random_sentences(rng, 2, 9, 2, 4);
    const auto tgt_sentences = random_sentences(rng, 2, 8, 2, 4);
    const TokenBatch src = make_token_batch(src_sentences, true);
    const TargetBatch tgt = make_target_batch(tgt_sentences);
    std::vector<Tensor> inputs;
    for (const auto& p : model.parameters()) inputs.push_back(p.tensor);
    const auto r = check_gradients([&] { return model.loss(src, tgt, 0.1f, kEval); }, inputs, 5e-3,
                                   rng, 4);
    worst_model = std::max(worst_model, r.relative_error);
    model_coords += r.coordinates;
    skipped += r.skipped_kinks;
  }
  const double elapsed = seconds_since(start);
  Outcome out;
  out.pass = worst_op <= 1e-3 && worst_model <= 1e-3 && elapsed < 120.0;
  out.detail = "worst op rel err " + fmt("%.2e", worst_op) + " (" + worst_name + ", " +
               std::to_string(op_checks) + " checks), worst 2-layer model rel err " +
               fmt("%.2e", worst_model) + " (" + std::to_string(model_coords) +
               " coords), kink-skipped " + std::to_string(skipped) + ", " +
               fmt("%.1f", elapsed) + " s (limit 1e-3, 120 s)";
  return out;
}

Outcome copy_task() {
  const auto start = Clock::now();
  const TrainRun run = train_run("copy-task.cfg", {{"train.checkpoint_dir", (g_work / "copy").string()}});
  TrainOutcome outcome;
  const TrainLogEntry best = run_until(run, 99.0, &outcome);
  const double elapsed = seconds_since(start);
  Outcome out;
  out.pass = best.dev_bleu >= 99.0 && best.epoch <= 100 && run.train.epochs <= 100 &&
             elapsed < 600.0 && run.model.provider == ProviderKind::lookup &&
             run.model.d_model == 64 && run.model.layers == 2;
  out.detail = "dev BLEU " + fmt("%.2f", best.dev_bleu) + " at epoch " +
               std::to_string(best.epoch) + ", " + fmt("%.1f", elapsed) +
               " s (need >= 99 within 100 epochs, < 600 s)";
  return out;
}

Outcome grid() {
  const auto start = Clock::now();
  std::ostringstream detail;
  bool pass = true;

  TrainOutcome lookup;
  const TrainRun lookup_run =
      train_run("grid-lookup.cfg", {{"train.checkpoint_dir", (g_work / "grid-a").string()}});
  const auto same_corpus = [&](const TrainRun& r) {
    return r.train_source == lookup_run.train_source && r.train_target == lookup_run.train_target &&
           r.dev_source == lookup_run.dev_source && r.dev_target == lookup_run.dev_target;
  };
  const TrainLogEntry a = run_until(lookup_run, 90.0, &lookup);
  pass = pass && a.dev_bleu >= 90.0;
  detail << "(a) lookup " << fmt("%.2f", a.dev_bleu) << " @" << a.epoch;

  struct Frozen {
    const char* label;
    const char* lm_config;
    const char* mt_config;
  };
  for (const Frozen& f : {Frozen{"(b) frozen d_lm=64", "toy-lm.cfg", "grid-frozen-64.cfg"},
                          Frozen{"(c) frozen d_lm=32", "toy-lm-32.cfg", "grid-frozen-32.cfg"}}) {
    const fs::path lm_path = g_work / (std::string(f.lm_config) + ".ckpt");
    const PretrainRun lm_run = pretrain_run(f.lm_config, {{"output.checkpoint", lm_path.string()}});
    run_pretraining(lm_run);
    const TrainRun mt = train_run(f.mt_config, {{"train.checkpoint_dir",
                                                 (g_work / f.mt_config).string()},
                                                {"data.lm_checkpoint", lm_path.string()}});
    TrainOutcome outcome;
    const TrainLogEntry e = run_until(mt, 90.0, &outcome);
    const bool lm_unchanged = outcome.lm_checksum_before == outcome.lm_checksum_after &&
                              !outcome.lm_checksum_before.empty();
    const bool resize_changed = outcome.resize_checksum_before != outcome.resize_checksum_after;
    const bool needs_resize = lm_run.lm.d_model != mt.model.d_model;
    pass = pass && e.dev_bleu >= 90.0 && lm_unchanged && resize_changed && same_corpus(mt) &&
           (f.lm_config == std::string("toy-lm.cfg") || needs_resize);
    detail << "; " << f.label << " (d_model " << mt.model.d_model << ") "
           << fmt("%.2f", e.dev_bleu) << " @" << e.epoch << ", LM checksum "
           << (lm_unchanged ? "unchanged" : "CHANGED") << ", resize checksum "
           << (resize_changed ? "changed" : "UNCHANGED")
           << (same_corpus(mt) ? "" : ", DIFFERENT corpus");
  }
  detail << "; " << fmt("%.1f", seconds_since(start)) << " s (need >= 90 each)";
  return {pass, detail.str()};
}

Outcome weight_tying() {
  std::size_t trials = 0, not_shared = 0, unmoved = 0, miscounted = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 300);
    const ModelConfig c = micro_config(9 + seed % 3, 8 + seed % 4);
    Transformer model(c, rng);
    const std::vector<std::vector<int>> src{random_sentence(rng, c.src_vocab_size, 1, 5)};
    const std::vector<std::vector<int>> tgt{random_sentence(rng, c.tgt_vocab_size, 1, 5)};
    const TokenBatch sb = make_token_batch(src, true);
    const TargetBatch tb = make_target_batch(tgt);
    const Tensor memory = model.encode(sb, kEval);
    const Tensor before = model.decode(memory, sb.len, sb.valid, tb.inputs, kEval);

    int sharing = 0;
    for (const auto& p : model.parameters()) {
      sharing += p.tensor.shares_storage_with(model.target_embedding());
    }
    // Change one output row through the parameter list; its logit column moves.
    const int token = static_cast<int>(kNumSpecials + uniform_index(rng, c.tgt_vocab_size - kNumSpecials));
    for (auto& p : model.parameters()) {
      if (p.tensor.shares_storage_with(model.target_embedding())) {
        for (std::size_t j = 0; j < c.d_model; ++j) {
          p.tensor.data()[token * c.d_model + j] += uniform_range(rng, -0.5f, 0.5f);
        }
      }
    }
    const Tensor after = model.decode(memory, sb.len, sb.valid, tb.inputs, kEval);
    const std::size_t v = c.tgt_vocab_size;
    bool column_changed = true;
    for (std::size_t r = 0; r < after.dim(0); ++r) {
      column_changed = column_changed && after.data()[r * v + token] != before.data()[r * v + token];
    }

    const std::size_t d = c.d_model, f = c.d_ff, L = c.layers;
    const std::size_t lin = d * d + d;
    const std::size_t enc = 4 * lin + (d * f + f) + (f * d + d) + 4 * d;
    const std::size_t dec = 8 * lin + (d * f + f) + (f * d + d) + 6 * d;
    const std::size_t hand = c.src_vocab_size * d + c.tgt_vocab_size * d + L * (enc + dec) + 4 * d;
    const auto count = model.parameter_count();
    not_shared += sharing != 1;
    unmoved += !column_changed;
    miscounted += count.trainable != hand ||
                  Transformer::formula_parameter_count(c, nullptr).trainable != hand;
    ++trials;
  }
  return {not_shared == 0 && unmoved == 0 && miscounted == 0,
          std::to_string(trials) + " models: output projection not sharing the target table " +
              std::to_string(not_shared) + ", mutated row left some logit unchanged " +
              std::to_string(unmoved) + ", count differing from the single-table hand count " +
              std::to_string(miscounted)};
}

Outcome causality() {
  std::size_t violations = 0, trials = 0, insensitive = 0;
  for (std::uint64_t m = 0; m < 10; ++m) {
    Rng rng(m + 700);
    Transformer model(micro_config(), rng);
    for (int t = 0; t < 100; ++t) {
      const std::vector<std::vector<int>> src{random_sentence(rng, 9, 1, 6)};
      auto tgt = random_sentence(rng, 8, 2, 8);
      const TokenBatch sb = make_token_batch(src, true);
      const Tensor memory = model.encode(sb, kEval);
      const std::vector<std::vector<int>> t1{tgt};
      const Tensor before = model.decode(memory, sb.len, sb.valid, make_target_batch(t1).inputs, kEval);
      const std::size_t j = uniform_index(rng, tgt.size());
      tgt[j] = kNumSpecials + (tgt[j] - kNumSpecials + 1 + static_cast<int>(uniform_index(rng, 2))) % 3;
      const std::vector<std::vector<int>> t2{tgt};
      const Tensor after = model.decode(memory, sb.len, sb.valid, make_target_batch(t2).inputs, kEval);
      // Decoder input j + 1 holds tgt[j]; rows 0..j must be bitwise identical.
      if (rows(before, 0, j + 1) != rows(after, 0, j + 1)) ++violations;
      if (rows(before, j + 1, 1) == rows(after, j + 1, 1)) ++insensitive;
      ++trials;
    }
  }
  return {violations == 0 && insensitive == 0,
          std::to_string(trials) + " trials, " + std::to_string(violations) +
              " with changed earlier logits, " + std::to_string(insensitive) +
              " where the perturbed position itself did not react"};
}

Outcome beam_properties() {
  std::size_t greedy_mismatch = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto model = random_model(seed, 6);
    const auto options = table_options(1, 8, 3);
    const auto beam = beam_search(model, options);
    const auto ref = greedy(model, options);
    greedy_mismatch += beam.best().tokens != ref.tokens || beam.best().score != ref.score;
  }
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed + 900);
    Transformer model(micro_config(), rng);
    const auto source = random_sentence(rng, 9, 1, 6);
    TransformerStepModel step(model, source);
    BeamOptions options;
    options.beam_size = 1;
    options.max_len = default_max_len(source.size());
    greedy_mismatch += beam_search(step, options).best().tokens != greedy(step, options).tokens;
  }

  std::size_t exhaustive_mismatch = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto model = random_model(seed, 3, 3.0);
    const auto options = table_options(12, 3, 2);
    const auto beam = beam_search(model, options);
    const auto ref = exhaustive_best(model, options);
    exhaustive_mismatch += beam.best().tokens != ref.tokens ||
                           std::fabs(beam.best().score - ref.score) > 1e-12;
  }

  // Best finished score as the beam widens from 1 to 12.
  std::size_t monotone_violations = 0, monotone_pairs = 0, models_violating = 0, lost_finished = 0;
  double worst_drop = 0.0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto model = random_model(seed + 10000, 6, 4.0);
    double previous = kNegInf;
    bool violated = false;
    for (std::size_t k = 1; k <= 12; ++k) {
      const auto result = beam_search(model, table_options(k, 6, 3));
      double best_finished = kNegInf;
      for (const auto& h : result.nbest) {
        if (h.finished) best_finished = std::max(best_finished, h.score);
      }
      if (k > 1) {
        ++monotone_pairs;
        if (best_finished < previous) {
          ++monotone_violations;
          if (best_finished == kNegInf) {
            ++lost_finished;
          } else {
            worst_drop = std::max(worst_drop, previous - best_finished);
          }
          violated = true;
        }
      }
      previous = best_finished;
    }
    models_violating += violated;
  }

  Outcome out;
  out.pass = greedy_mismatch == 0 && exhaustive_mismatch == 0 && monotone_violations == 0;
  out.detail = "beam1 vs greedy mismatches " + std::to_string(greedy_mismatch) +
               "/200; beam12 vs exhaustive (V=3, max_len=3) mismatches " +
               std::to_string(exhaustive_mismatch) + "/200; best-finished score decreased in " +
               std::to_string(monotone_violations) + "/" + std::to_string(monotone_pairs) +
               " beam-size steps (" + std::to_string(models_violating) +
               "/200 models; " + std::to_string(lost_finished) +
               " with no finished hypothesis at the wider beam, worst finite drop " +
               fmt("%.3f", worst_drop) + " nats)";
  return out;
}

Outcome bleu_oracle() {
  using Corpus = std::vector<std::vector<std::string>>;
  bool pass = true;
  std::vector<std::string> notes;

  const auto the = bleu(Corpus{{"the", "the", "the"}}, Corpus{{"the", "cat"}});
  const bool the_ok = the.matches[0] == 1 && the.totals[0] == 3 &&
                      std::fabs(the.precisions[0] - 1.0 / 3.0) <= 1e-9 && the.bleu == 0.0;
  pass = pass && the_ok;
  notes.push_back(std::string("the-the-the ") + (the_ok ? "ok" : "WRONG"));

  const Corpus hyp{{"a", "b", "c", "d"}, {"a", "a", "b"}};
  const Corpus ref{{"a", "b", "c", "d", "e"}, {"a", "b", "b", "c"}};
  const double bp = std::exp(1.0 - 9.0 / 7.0);
  const double hand =
      100.0 * bp * std::exp((std::log(6.0 / 7) + std::log(4.0 / 5) + std::log(2.0 / 3) + 0.0) / 4);
  const double hand_err = std::fabs(bleu(hyp, ref).bleu - hand);
  pass = pass && hand_err <= 1e-9;
  notes.push_back("hand-counted corpus err " + fmt("%.1e", hand_err));

  std::size_t golden_ok = 0;
  const auto split = [](const std::vector<std::string>& lines) {
    Corpus out;
    for (const auto& l : lines) out.push_back(text::split_whitespace(l));
    return out;
  };
  const Corpus fh = split(read_data_lines("metrics/fixture.hyp"));
  const Corpus fr = split(read_data_lines("metrics/fixture.ref"));
  const auto golden = read_data_lines("metrics/golden.txt");
  for (const auto& row : golden) {
    std::istringstream in(row);
    std::string name, score, line;
    std::getline(in, name, '\t');
    std::getline(in, score, '\t');
    std::getline(in, line);
    BleuOptions opts;
    opts.lowercase = name == "lowercase";
    opts.smooth = name == "smooth";
    const auto r = bleu(fh, fr, opts);
    golden_ok += std::fabs(r.bleu - std::stod(score)) <= 1e-9 && format_bleu(r) == line;
  }
  pass = pass && golden_ok == golden.size() && !golden.empty();
  notes.push_back("golden fixtures " + std::to_string(golden_ok) + "/" + std::to_string(golden.size()));

  const auto same = bleu(ref, ref);
  const bool hundred = format_bleu(same).rfind("BLEU = 100.00,", 0) == 0;
  pass = pass && hundred;
  notes.push_back(std::string("identical corpora ") + (hundred ? "100.00" : format_bleu(same)));

  Rng rng(8);
  static const std::vector<std::string> words{"a", "b", "c", "d", "A", "B", "e", "f", "Ä", "ä"};
  std::size_t lc_mismatch = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Corpus h, r;
    for (Corpus* c : {&h, &r}) {
      for (int line = 0; line < 12; ++line) {
        std::vector<std::string> l(1 + uniform_index(rng, 10));
        for (auto& w : l) w = words[uniform_index(rng, words.size())];
        c->push_back(l);
      }
    }
    Corpus hl = h, rl = r;
    for (Corpus* c : {&hl, &rl}) {
      for (auto& l : *c) {
        for (auto& w : l) w = utf8::to_lower(w);
      }
    }
    BleuOptions lc;
    lc.lowercase = true;
    lc.smooth = true;
    BleuOptions plain;
    plain.smooth = true;
    lc_mismatch += bleu(h, r, lc).bleu != bleu(hl, rl, plain).bleu;
  }
  pass = pass && lc_mismatch == 0;
  notes.push_back("lowercase equivalence mismatches " + std::to_string(lc_mismatch) + "/50");

  std::string detail;
  for (const auto& n : notes) detail += (detail.empty() ? "" : "; ") + n;
  return {pass, detail};
}

Outcome clean_boundaries() {
  auto words = [](std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += (i ? " w" : "w") + std::to_string(i % 7);
    return s;
  };
  struct Fixture {
    std::size_t src, tgt;
    text::CleanDecision expected;
  };
  const std::vector<Fixture> fixtures{
      {80, 80, text::CleanDecision::keep},        {81, 80, text::CleanDecision::drop_length},
      {80, 81, text::CleanDecision::drop_length}, {10, 15, text::CleanDecision::keep},
      {15, 10, text::CleanDecision::keep},        {10, 16, text::CleanDecision::drop_ratio},
      {16, 10, text::CleanDecision::drop_ratio},  {0, 4, text::CleanDecision::drop_empty},
      {54, 80, text::CleanDecision::keep},        {53, 80, text::CleanDecision::drop_ratio},
  };
  std::vector<std::string> src, tgt;
  std::size_t decision_errors = 0;
  text::CleanReport expected;
  for (const auto& f : fixtures) {
    src.push_back(words(f.src));
    tgt.push_back(words(f.tgt));
    expected.record(f.expected);
    const text::SentencePair pair{text::tokenize(src.back()), text::tokenize(tgt.back()), 1};
    decision_errors += text::clean_pair(pair, text::CleanOptions{}) != f.expected;
  }
  const auto result = text::preprocess_corpus(src, tgt, text::CleanOptions{});
  const bool counts = result.report.format() == expected.format() && result.report.reconciles();
  return {decision_errors == 0 && counts,
          std::to_string(fixtures.size()) + " boundary fixtures (80/81 words, 1.5/1.6 ratio), " +
              std::to_string(decision_errors) + " wrong decisions; report " +
              (counts ? "reconciles and matches" : "MISMATCH")};
}

Outcome bpe_properties() {
  std::size_t merge_mismatch = 0, segment_mismatch = 0;
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto corpus = random_corpus(rng, 150 + 10 * trial, trial % 2 ? "abcd" : "abcdefgh", 7);
    NaiveLearner oracle(corpus);
    const auto expected = oracle.learn(60);
    const auto model = bpe::learn_bpe(corpus, 60);
    merge_mismatch += model.merges() != expected;
    for (const auto& [w, syms] : oracle.symbols) segment_mismatch += bpe::segment_symbols(w, model) != syms;
  }

  Rng words(2024);
  Corpus training;
  for (int i = 0; i < 2000; ++i) training.push_back(random_unicode_word(words));
  for (int i = 0; i < 2000; ++i) training.push_back(training[uniform_index(words, 500)]);
  const auto model = bpe::learn_bpe(training, 300);
  std::size_t lossy = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::string w = i % 3 == 0 ? training[uniform_index(words, training.size())]
                                     : random_unicode_word(words);
    const auto pieces = bpe::apply_bpe(w, model);
    lossy += concat_pieces(pieces) != w || bpe::remove_bpe(pieces) != std::vector<std::string>{w};
  }
  return {merge_mismatch == 0 && segment_mismatch == 0 && lossy == 0,
          "merge sequences differing from the pair-counting oracle " +
              std::to_string(merge_mismatch) + "/20 corpora, segmentation mismatches " +
              std::to_string(segment_mismatch) + "; lossy round trips " + std::to_string(lossy) +
              "/10000 words"};
}

// Sentences where each token follows its predecessor cyclically.
std::vector<std::vector<int>> cyclic_corpus(Rng& rng, std::size_t n, int symbols) {
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto len = 4 + uniform_index(rng, 5);
    int cur = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(symbols)));
    std::vector<int> s;
    for (std::uint64_t k = 0; k < len; ++k) {
      s.push_back(kNumSpecials + cur);
      cur = (cur + 1) % symbols;
    }
    out.push_back(s);
  }
  return out;
}

Outcome mlm_statistics() {
  Rng rng(2);
  std::vector<int> ids(1000000);
  for (auto& id : ids) id = kNumSpecials + static_cast<int>(uniform_index(rng, 50));
  const auto m = lm::mask_tokens(ids, lm::MaskingPolicy{}, 55, rng);
  const double fraction = static_cast<double>(m.selected) / static_cast<double>(ids.size());

  Rng data(6);
  const auto corpus = cyclic_corpus(data, 50, 12);
  const std::size_t V = kNumSpecials + 12;
  lm::LmConfig c = micro_lm_config(V, 16);
  c.d_ff = 32;
  Rng init(7);
  lm::LmModel model(c, init, "toy");
  lm::PretrainOptions o;
  o.epochs = 60;
  o.batch_size = 10;
  o.valid_fraction = 0.2;
  o.adam.lr = 3e-3f;
  o.seed = 5;
  lm::Pretrainer trainer(model, corpus, o);
  bool exact = true;
  for (std::size_t e = 0; e < o.epochs; ++e) {
    const auto metrics = trainer.run_epoch();
    exact = exact && metrics.valid_perplexity == std::exp(metrics.valid_loss);
  }
  const double best_ppl = trainer.log().at(trainer.best_epoch() - 1).valid_perplexity;
  return {std::fabs(fraction - 0.15) <= 0.005 && exact && best_ppl < static_cast<double>(V),
          "masked fraction " + fmt("%.5f", fraction) + " over 1e6 tokens (0.15 +- 0.005); "
          "perplexity == exp(loss) " + (exact ? "exactly" : "NOT exactly") +
              "; 50-sentence toy LM perplexity " + fmt("%.3f", best_ppl) + " vs uniform " +
              std::to_string(V)};
}

Outcome determinism() {
  const std::map<std::string, std::string> small{
      {"model.d_model", "16"}, {"model.d_ff", "32"}, {"model.heads", "2"},
      {"train.epochs", "4"},   {"train.dev_beam", "2"}};
  auto with_dir = [&](const std::string& dir) {
    auto o = small;
    o["train.checkpoint_dir"] = (g_work / dir).string();
    o["train.keep_all_checkpoints"] = "true";
    return train_run("copy-task.cfg", o);
  };
  run_training(with_dir("det-a"));
  run_training(with_dir("det-b"));
  const bool logs = log_without_time(g_work / "det-a" / "train.log") ==
                    log_without_time(g_work / "det-b" / "train.log");
  bool checkpoints = true;
  for (std::size_t e = 1; e <= 4; ++e) {
    checkpoints = checkpoints && slurp(Trainer::checkpoint_path(g_work / "det-a", e)) ==
                                     slurp(Trainer::checkpoint_path(g_work / "det-b", e));
  }

  const std::string bytes = slurp(Trainer::checkpoint_path(g_work / "det-a", 4));
  const bool round_trip = serialize_checkpoint(parse_checkpoint(bytes)) == bytes;

  TrainRun first_half = with_dir("det-c");
  first_half.train.epochs = 2;
  run_training(first_half);
  run_training(with_dir("det-c"), Trainer::checkpoint_path(g_work / "det-c", 2));
  const bool resumed = slurp(Trainer::checkpoint_path(g_work / "det-c", 4)) == bytes &&
                       log_without_time(g_work / "det-c" / "train.log") ==
                           log_without_time(g_work / "det-a" / "train.log");

  // Same for LM pretraining through its saved state.
  auto lm_run = [&](const std::string& name, std::size_t epochs) {
    return pretrain_run("toy-lm.cfg", {{"output.checkpoint", (g_work / name).string()},
                                       {"pretrain.epochs", std::to_string(epochs)},
                                       {"lm.d_model", "16"}, {"lm.d_ff", "32"}, {"lm.heads", "2"}});
  };
  run_pretraining(lm_run("lm-full", 3));
  run_pretraining(lm_run("lm-part", 1));
  const PretrainRun rest = lm_run("lm-part", 3);
  run_pretraining(rest, rest.state);
  const bool lm_resumed = slurp(g_work / "lm-full") == slurp(g_work / "lm-part") &&
                          slurp(g_work / "lm-full.state") == slurp(g_work / "lm-part.state");

  return {logs && checkpoints && round_trip && resumed && lm_resumed,
          std::string("equal-seed logs ") + (logs ? "identical" : "DIFFER") + ", checkpoints " +
              (checkpoints ? "bitwise identical" : "DIFFER") + ", round trip " +
              (round_trip ? "bitwise" : "NOT bitwise") + ", MT resume " +
              (resumed ? "matches" : "DIFFERS") + ", LM resume " +
              (lm_resumed ? "matches" : "DIFFERS") + " (log comparison ignores wall time)"};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

std::set<int> parse_ids(const std::string& text) {
  std::set<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.insert(std::stoi(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string only, expect_fail, work_dir;
  bool keep = false;
  app.add_option("--only", only, "Comma-separated criterion numbers");
  app.add_option("--expect-fail", expect_fail, "Criteria known to fail");
  app.add_option("--work-dir", work_dir, "Scratch directory");
  app.add_flag("--keep", keep, "Keep the scratch directory");
  CLI11_PARSE(app, argc, argv);

  g_work = work_dir.empty() ? fs::temp_directory_path() /
                                  ("nmt-acceptance-" + std::to_string(::getpid()))
                            : fs::path(work_dir);
  fs::create_directories(g_work);

  const std::vector<Criterion> criteria{
      {1, "gradient correctness", gradient_correctness},
      {2, "copy-task learnability", copy_task},
      {3, "three-configuration grid", grid},
      {4, "weight tying", weight_tying},
      {5, "causality", causality},
      {6, "beam properties", beam_properties},
      {7, "BLEU oracle", bleu_oracle},
      {8, "preprocessing boundaries", clean_boundaries},
      {9, "BPE", bpe_properties},
      {10, "MLM statistics", mlm_statistics},
      {11, "determinism and persistence", determinism},
  };
  const std::set<int> selected = parse_ids(only);
  const std::set<int> expected_failures = parse_ids(expect_fail);
  std::set<int> failures;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) failures.insert(c.id);
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail
              << std::endl;
  }
  if (!keep) fs::remove_all(g_work);

  std::set<int> relevant_expected;
  for (int id : expected_failures) {
    if (selected.empty() || selected.count(id)) relevant_expected.insert(id);
  }
  if (failures == relevant_expected) return 0;
  for (int id : failures) {
    if (!relevant_expected.count(id)) std::cout << "unexpected failure: [" << id << "]\n";
  }
  for (int id : relevant_expected) {
    if (!failures.count(id)) std::cout << "expected failure now passes: [" << id << "]\n";
  }
  return 1;
}
