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

#include "nmt/batch.hpp"

#include <algorithm>

#include "nmt/error.hpp"
#include "nmt/vocab.hpp"

namespace nmt {

std::size_t TokenBatch::tokens() const {
  std::size_t n = 0;
  for (auto l : lengths) n += l;
  return n;
}

TokenBatch make_token_batch(std::span<const std::vector<int>> sentences, bool append_eos) {
  if (sentences.empty()) throw DataError("cannot batch zero sentences");
  TokenBatch out;
  out.batch = sentences.size();
  for (const auto& s : sentences) {
    const std::size_t n = s.size() + (append_eos ? 1 : 0);
    if (n == 0) throw DataError("cannot batch an empty sentence");
    out.lengths.push_back(n);
    out.len = std::max(out.len, n);
  }
  out.ids.assign(out.rows(), kPadId);
  out.valid.assign(out.rows(), 0);
  for (std::size_t b = 0; b < out.batch; ++b) {
    const auto& s = sentences[b];
    std::copy(s.begin(), s.end(), out.ids.begin() + static_cast<std::ptrdiff_t>(b * out.len));
    if (append_eos) out.ids[b * out.len + s.size()] = kEosId;
    std::fill_n(out.valid.begin() + static_cast<std::ptrdiff_t>(b * out.len), out.lengths[b], 1);
  }
  return out;
}

TargetBatch make_target_batch(std::span<const std::vector<int>> sentences) {
  std::vector<std::vector<int>> shifted;
  shifted.reserve(sentences.size());
  for (const auto& s : sentences) {
    std::vector<int> in{kBosId};
    in.insert(in.end(), s.begin(), s.end());
    shifted.push_back(std::move(in));
  }
  TargetBatch out{make_token_batch(shifted, false), {}};
  out.targets.assign(out.inputs.rows(), kPadId);
  for (std::size_t b = 0; b < sentences.size(); ++b) {
    const auto& s = sentences[b];
    for (std::size_t t = 0; t < s.size(); ++t) out.targets[b * out.inputs.len + t] = s[t];
    out.targets[b * out.inputs.len + s.size()] = kEosId;
  }
  return out;
}

}  // namespace nmt
