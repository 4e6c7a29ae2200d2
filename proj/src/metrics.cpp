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

#include "nmt/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include "nmt/error.hpp"
#include "nmt/utf8.hpp"

namespace nmt {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

std::vector<std::string> fold(const std::vector<std::string>& tokens, bool lowercase) {
  if (!lowercase) return tokens;
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(utf8::to_lower(t));
  return out;
}

}  // namespace

BleuReport bleu(std::span<const std::vector<std::string>> hypotheses,
                std::span<const std::vector<std::string>> references, const BleuOptions& options) {
  if (hypotheses.size() != references.size()) {
    throw DataError("hypothesis has " + std::to_string(hypotheses.size()) +
                    " lines but reference has " + std::to_string(references.size()));
  }
  if (hypotheses.empty()) throw DataError("BLEU of an empty corpus is undefined");
  if (options.max_n == 0) throw ConfigError("BLEU max_n must be positive");

  BleuReport report;
  report.matches.assign(options.max_n, 0);
  report.totals.assign(options.max_n, 0);
  for (std::size_t line = 0; line < hypotheses.size(); ++line) {
    const auto hyp = fold(hypotheses[line], options.lowercase);
    const auto ref = fold(references[line], options.lowercase);
    report.hyp_len += hyp.size();
    report.ref_len += ref.size();
    for (std::size_t n = 1; n <= options.max_n; ++n) {
      const NgramCounts hyp_counts = count_ngrams(hyp, n);
      const NgramCounts ref_counts = count_ngrams(ref, n);
      for (const auto& [gram, count] : hyp_counts) {
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) report.matches[n - 1] += std::min(count, it->second);
        report.totals[n - 1] += count;
      }
    }
  }

  report.precisions.assign(options.max_n, 0.0);
  double log_sum = 0.0;
  bool any_zero = false;
  for (std::size_t n = 0; n < options.max_n; ++n) {
    double num = static_cast<double>(report.matches[n]);
    double den = static_cast<double>(report.totals[n]);
    if (options.smooth && n > 0) {
      num += 1.0;
      den += 1.0;
    }
    const double p = den > 0.0 ? num / den : 0.0;
    report.precisions[n] = p;
    if (p <= 0.0) {
      any_zero = true;
    } else {
      log_sum += std::log(p);
    }
  }

  if (report.hyp_len == 0) {
    report.brevity_penalty = 0.0;
  } else {
    const double r_over_h =
        static_cast<double>(report.ref_len) / static_cast<double>(report.hyp_len);
    report.brevity_penalty = r_over_h > 1.0 ? std::exp(1.0 - r_over_h) : 1.0;
  }
  report.bleu = any_zero ? 0.0
                         : 100.0 * report.brevity_penalty *
                               std::exp(log_sum / static_cast<double>(options.max_n));
  return report;
}

std::string format_bleu(const BleuReport& report) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "BLEU = %.2f, ", report.bleu);
  std::string out = buffer;
  for (std::size_t n = 0; n < report.precisions.size(); ++n) {
    out += (n == 0 ? "p" : "/p") + std::to_string(n + 1);
  }
  out += " = ";
  for (std::size_t n = 0; n < report.precisions.size(); ++n) {
    std::snprintf(buffer, sizeof buffer, "%s%.1f", n == 0 ? "" : "/", 100.0 * report.precisions[n]);
    out += buffer;
  }
  std::snprintf(buffer, sizeof buffer, ", BP = %.3f, ratio = %.3f", report.brevity_penalty,
                report.ratio());
  out += buffer;
  out += ", hyp_len = " + std::to_string(report.hyp_len) +
         ", ref_len = " + std::to_string(report.ref_len);
  return out;
}

}  // namespace nmt
