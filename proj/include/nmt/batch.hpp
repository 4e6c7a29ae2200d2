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

#include <cstdint>
#include <span>
#include <vector>

namespace nmt {

// Right-padded token ids, batch-major: row b occupies ids[b*len, (b+1)*len).
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<int> ids;
  std::vector<std::uint8_t> valid;
  std::vector<std::size_t> lengths;

  std::size_t rows() const { return batch * len; }
  std::size_t tokens() const;
};

// Pads sentences to the longest one. With `append_eos` every sentence gets a
// trailing EOS first, which is how source sentences enter the encoder.
TokenBatch make_token_batch(std::span<const std::vector<int>> sentences, bool append_eos);

// Decoder inputs (BOS + sentence) and aligned targets (sentence + EOS). Padded
// target positions hold PAD and are ignored by the loss.
struct TargetBatch {
  TokenBatch inputs;
  std::vector<int> targets;
};

TargetBatch make_target_batch(std::span<const std::vector<int>> sentences);

}  // namespace nmt
