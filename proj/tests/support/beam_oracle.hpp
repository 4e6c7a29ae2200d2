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

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "nmt/decoder.hpp"
#include "nmt/random.hpp"

namespace nmt::testing {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Next-token distributions given by an arbitrary function of the prefix.
class FunctionModel : public StepModel {
 public:
  using Fn = std::function<std::vector<double>(const std::vector<int>&)>;
  FunctionModel(std::size_t vocab, Fn fn) : vocab_(vocab), fn_(std::move(fn)) {}
  std::size_t vocab_size() const override { return vocab_; }
  std::vector<std::vector<double>> next_log_probs(
      std::span<const std::vector<int>> prefixes) override {
    std::vector<std::vector<double>> out;
    for (const auto& p : prefixes) out.push_back(fn_(p));
    return out;
  }

 private:
  std::size_t vocab_;
  Fn fn_;
};

// Pseudo-random but fixed distribution per prefix.
inline std::vector<double> random_distribution(std::uint64_t seed, const std::vector<int>& prefix,
                                        std::size_t vocab, double sharpness) {
  std::uint64_t h = seed * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL;
  for (int t : prefix) h = (h ^ static_cast<std::uint64_t>(t + 7)) * 0x100000001b3ULL;
  Rng rng(h);
  std::vector<double> logits(vocab);
  for (auto& l : logits) l = sharpness * uniform01(rng);
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  for (auto& l : logits) l -= std::log(z);
  return logits;
}

inline FunctionModel random_model(std::uint64_t seed, std::size_t vocab, double sharpness = 4.0) {
  return FunctionModel(vocab, [=](const std::vector<int>& p) {
    return random_distribution(seed, p, vocab, sharpness);
  });
}

inline Hypothesis greedy(StepModel& model, const BeamOptions& options) {
  Hypothesis h{{options.bos}, 0.0, false};
  for (std::size_t step = 0; step < options.max_len; ++step) {
    const std::vector<std::vector<int>> prefix{h.tokens};
    const auto lp = model.next_log_probs(prefix)[0];
    const auto best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    h.tokens.push_back(best);
    h.score += lp[static_cast<std::size_t>(best)];
    if (best == options.eos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

// Best EOS-terminated sequence of at most max_len generated tokens.
inline Hypothesis exhaustive_best(StepModel& model, const BeamOptions& options) {
  Hypothesis best{{}, kNegInf, false};
  std::function<void(std::vector<int>&, double)> walk = [&](std::vector<int>& prefix, double score) {
    if (prefix.size() > options.max_len) return;
    const std::vector<std::vector<int>> one{prefix};
    const auto lp = model.next_log_probs(one)[0];
    for (std::size_t v = 0; v < lp.size(); ++v) {
      if (lp[v] == kNegInf) continue;
      prefix.push_back(static_cast<int>(v));
      const double s = score + lp[v];
      if (static_cast<int>(v) == options.eos) {
        if (s > best.score || (s == best.score && prefix < best.tokens)) best = {prefix, s, true};
      } else {
        walk(prefix, s);
      }
      prefix.pop_back();
    }
  };
  std::vector<int> start{options.bos};
  walk(start, 0.0);
  return best;
}

inline BeamOptions table_options(std::size_t beam, std::size_t max_len, int eos) {
  BeamOptions o;
  o.beam_size = beam;
  o.max_len = max_len;
  o.bos = 0;
  o.eos = eos;
  return o;
}

}  // namespace nmt::testing
