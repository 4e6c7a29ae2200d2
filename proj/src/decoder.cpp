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

#include "nmt/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "nmt/batch.hpp"
#include "nmt/error.hpp"
#include "nmt/ops.hpp"
#include "nmt/subword.hpp"
#include "nmt/textpipe.hpp"

namespace nmt {

namespace {

struct Candidate {
  double score;
  int token;
  std::size_t parent;
};

bool candidate_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.token != b.token) return a.token < b.token;
  return a.parent < b.parent;
}

double adjusted_score(const Hypothesis& h, double alpha) {
  if (alpha <= 0.0) return h.score;
  const double length = static_cast<double>(h.tokens.size() - 1);
  return h.score / std::pow(std::max(length, 1.0), alpha);
}

void sort_final(std::vector<Hypothesis>& hyps, double alpha) {
  std::stable_sort(hyps.begin(), hyps.end(), [alpha](const Hypothesis& a, const Hypothesis& b) {
    const double sa = adjusted_score(a, alpha);
    const double sb = adjusted_score(b, alpha);
    if (sa != sb) return sa > sb;
    return a.tokens < b.tokens;
  });
}

std::vector<double> log_softmax_row(std::span<const float> logits) {
  double peak = -std::numeric_limits<double>::infinity();
  for (float v : logits) peak = std::max(peak, static_cast<double>(v));
  double total = 0.0;
  for (float v : logits) total += std::exp(static_cast<double>(v) - peak);
  const double log_z = peak + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - log_z;
  return out;
}

}  // namespace

std::vector<int> Hypothesis::output() const {
  if (tokens.empty()) return {};
  auto end = tokens.end();
  if (finished) --end;
  return std::vector<int>(tokens.begin() + 1, end);
}

std::size_t default_max_len(std::size_t source_length) { return 2 * source_length + 10; }

BeamResult beam_search(StepModel& model, const BeamOptions& options) {
  if (options.beam_size == 0) throw ConfigError("beam size must be at least 1");
  if (options.max_len == 0) throw ConfigError("max_len must be at least 1");
  const std::size_t vocab = model.vocab_size();

  std::vector<Hypothesis> live{Hypothesis{{options.bos}, 0.0, false}};
  std::vector<Hypothesis> finished;
  std::vector<Candidate> candidates;

  for (std::size_t step = 0; step < options.max_len && !live.empty(); ++step) {
    std::vector<std::vector<int>> prefixes;
    prefixes.reserve(live.size());
    for (const auto& h : live) prefixes.push_back(h.tokens);
    const auto log_probs = model.next_log_probs(prefixes);
    if (log_probs.size() != live.size()) throw DimensionError("step model returned wrong row count");

    candidates.clear();
    for (std::size_t p = 0; p < live.size(); ++p) {
      if (log_probs[p].size() != vocab) throw DimensionError("step model returned wrong row width");
      for (std::size_t v = 0; v < vocab; ++v) {
        const double lp = log_probs[p][v];
        if (std::isnan(lp)) throw NumericError("NaN log-probability during beam search");
        if (lp == -std::numeric_limits<double>::infinity()) continue;
        candidates.push_back({live[p].score + lp, static_cast<int>(v), p});
      }
    }
    const std::size_t keep = std::min(options.beam_size, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), candidate_before);

    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = candidates[i];
      Hypothesis h{live[c.parent].tokens, c.score, c.token == options.eos};
      h.tokens.push_back(c.token);
      (h.finished ? finished : next).push_back(std::move(h));
    }
    live = std::move(next);

    if (options.length_penalty <= 0.0 && !finished.empty() && !live.empty()) {
      double best_finished = -std::numeric_limits<double>::infinity();
      for (const auto& h : finished) best_finished = std::max(best_finished, h.score);
      if (best_finished > live.front().score) break;
    }
  }

  BeamResult result;
  const std::size_t n = std::max<std::size_t>(1, std::min(options.nbest, options.beam_size));
  if (finished.empty()) {
    result.truncated = true;
    if (live.empty()) throw NumericError("beam search found no candidate continuation");
    sort_final(live, options.length_penalty);
    finished = std::move(live);
  } else {
    sort_final(finished, options.length_penalty);
  }
  if (finished.size() > n) finished.resize(n);
  result.nbest = std::move(finished);
  return result;
}

double score_sequence(StepModel& model, std::span<const int> tokens) {
  double total = 0.0;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const std::vector<std::vector<int>> prefix{std::vector<int>(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(i))};
    const auto rows = model.next_log_probs(prefix);
    total += rows.at(0).at(static_cast<std::size_t>(tokens[i]));
  }
  return total;
}

TransformerStepModel::TransformerStepModel(const Transformer& model, std::span<const int> source,
                                           bool incremental)
    : model_(model), incremental_(incremental) {
  NoGradGuard no_grad;
  const std::vector<std::vector<int>> one{std::vector<int>(source.begin(), source.end())};
  const TokenBatch batch = make_token_batch(one, /*append_eos=*/true);
  memory_ = model_.encode(batch, ForwardMode{});
  memory_len_ = batch.len;
  memory_valid_ = batch.valid;
}

std::size_t TransformerStepModel::vocab_size() const { return model_.config().tgt_vocab_size; }

std::vector<std::vector<double>> TransformerStepModel::next_log_probs(
    std::span<const std::vector<int>> prefixes) {
  NoGradGuard no_grad;
  if (prefixes.empty()) return {};
  if (!incremental_) return full_decode(prefixes);
  const std::size_t len = prefixes.front().size();
  for (const auto& p : prefixes) {
    if (p.size() != len || len == 0) return full_decode(prefixes);
  }
  return cached_decode(prefixes);
}

std::vector<std::vector<double>> TransformerStepModel::cached_decode(
    std::span<const std::vector<int>> prefixes) {
  const std::size_t len = prefixes.front().size();
  std::vector<int> parents;
  if (len == cache_.length + 1 && cache_.hypotheses > 0) {
    std::map<std::span<const int>, int, decltype([](std::span<const int> a, std::span<const int> b) {
               return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
             })>
        rows;
    for (std::size_t i = 0; i < cached_prefixes_.size(); ++i) {
      rows.emplace(cached_prefixes_[i], static_cast<int>(i));
    }
    for (const auto& p : prefixes) {
      const auto it = rows.find(std::span<const int>(p).first(len - 1));
      if (it == rows.end()) {
        parents.clear();
        break;
      }
      parents.push_back(it->second);
    }
  }

  std::vector<int> last;
  last.reserve(prefixes.size());
  for (const auto& p : prefixes) last.push_back(p.back());
  Tensor logits;
  if (!parents.empty()) {
    cache_.select(parents);
    logits = model_.decode_step(cache_, last);
  } else {
    cache_ = model_.start_decoding(memory_, memory_len_, memory_valid_);
    std::vector<int> column(prefixes.size());
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t i = 0; i < prefixes.size(); ++i) column[i] = prefixes[i][t];
      logits = model_.decode_step(cache_, column);
    }
  }
  cached_prefixes_.assign(prefixes.begin(), prefixes.end());

  const std::size_t vocab = vocab_size();
  const auto data = logits.data();
  std::vector<std::vector<double>> out;
  out.reserve(prefixes.size());
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    out.push_back(log_softmax_row(data.subspan(i * vocab, vocab)));
  }
  return out;
}

std::vector<std::vector<double>> TransformerStepModel::full_decode(
    std::span<const std::vector<int>> prefixes) {
  const std::size_t k = prefixes.size();
  if (k != tiled_count_) {
    std::vector<Tensor> copies(k, memory_);
    tiled_memory_ = k == 1 ? memory_ : concat(copies, 0);
    tiled_valid_.clear();
    for (std::size_t i = 0; i < k; ++i) {
      tiled_valid_.insert(tiled_valid_.end(), memory_valid_.begin(), memory_valid_.end());
    }
    tiled_count_ = k;
  }
  const TokenBatch inputs = make_token_batch(prefixes, /*append_eos=*/false);
  for (const auto& p : prefixes) {
    if (p.size() != inputs.len) throw DimensionError("beam prefixes must have equal length");
  }
  const Tensor logits = model_.decode(tiled_memory_, memory_len_, tiled_valid_, inputs, ForwardMode{});
  const std::size_t vocab = vocab_size();
  const auto data = logits.data();
  std::vector<std::vector<double>> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t row = i * inputs.len + inputs.len - 1;
    out.push_back(log_softmax_row(data.subspan(row * vocab, vocab)));
  }
  return out;
}

BeamResult translate_ids(const Transformer& model, std::span<const int> source,
                         BeamOptions options) {
  // The EOS-terminated source must fit the positional table, and so must the
  // longest decoder prefix (BOS plus max_len - 1 tokens).
  if (options.max_len == 0) options.max_len = default_max_len(source.size() + 1);
  options.max_len = std::min(options.max_len, model.config().max_positions);
  TransformerStepModel step(model, source);
  return beam_search(step, options);
}

std::string render_translation(const Vocabulary& target_vocab, std::span<const int> ids,
                               bool detokenize) {
  const auto subwords = target_vocab.decode(ids);
  const auto words = bpe::remove_bpe(subwords);
  return detokenize ? text::detokenize(words) : text::join(words);
}

std::vector<std::string> translate_corpus(const Transformer& model, const Vocabulary& source_vocab,
                                          const Vocabulary& target_vocab,
                                          std::span<const std::string> lines,
                                          const TranslateOptions& options,
                                          TranslationStats* stats, std::ostream* warnings) {
  TranslationStats local;
  std::vector<std::string> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    ++local.lines;
    try {
      const auto tokens = text::split_whitespace(lines[i]);
      const auto ids = source_vocab.encode(tokens);
      const BeamResult result = translate_ids(model, ids, options.beam);
      if (result.truncated) ++local.truncated;
      if (options.beam.nbest <= 1) {
        out.push_back(render_translation(target_vocab, result.best().output(), options.detokenize));
      } else {
        for (const auto& h : result.nbest) {
          std::ostringstream line;
          line << i << " ||| " << render_translation(target_vocab, h.output(), options.detokenize)
               << " ||| " << h.score;
          out.push_back(line.str());
        }
      }
    } catch (const Error& e) {
      ++local.failed;
      if (warnings) *warnings << "warning: line " << (i + 1) << ": " << e.what() << "\n";
      out.emplace_back();
    }
  }
  if (stats) *stats = local;
  return out;
}

}  // namespace nmt
