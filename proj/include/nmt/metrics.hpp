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

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace nmt {

struct BleuOptions {
  std::size_t max_n = 4;
  bool lowercase = false;
  // Add-one smoothing of orders n > 1.
  bool smooth = false;
};

struct BleuReport {
  double bleu = 0.0;  // percentage
  std::vector<double> precisions;  // p_1 .. p_max_n as fractions
  std::vector<std::size_t> matches;
  std::vector<std::size_t> totals;
  double brevity_penalty = 0.0;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;

  double ratio() const {
    return ref_len == 0 ? 0.0 : static_cast<double>(hyp_len) / static_cast<double>(ref_len);
  }
};

// Corpus-level single-reference BLEU on tokenized lines.
BleuReport bleu(std::span<const std::vector<std::string>> hypotheses,
                std::span<const std::vector<std::string>> references,
                const BleuOptions& options = {});

// `BLEU = 35.20, p1/p2/p3/p4 = 70.1/45.0/30.2/20.9, BP = 1.000, ratio = 1.013,
// hyp_len = 1024, ref_len = 1011`
std::string format_bleu(const BleuReport& report);

}  // namespace nmt
