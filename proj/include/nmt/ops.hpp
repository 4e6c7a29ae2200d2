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

#include "nmt/random.hpp"
#include "nmt/tensor.hpp"

namespace nmt {

// Matrix products on rank-2 tensors. matmul_nt multiplies by the transpose of
// its second argument without materializing it.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
// Adds a vector along the last dimension of x.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor relu(const Tensor& x);

// While alive, records on this thread whether each relu input was positive.
// Finite-difference checks compare patterns to detect steps across a kink.
class ReluPatternRecorder {
 public:
  ReluPatternRecorder();
  ~ReluPatternRecorder();
  ReluPatternRecorder(const ReluPatternRecorder&) = delete;
  ReluPatternRecorder& operator=(const ReluPatternRecorder&) = delete;

  std::vector<std::uint8_t> take();

 private:
  friend Tensor relu(const Tensor& x);
  std::vector<std::uint8_t> pattern_;
  ReluPatternRecorder* previous_;
};

// Inverted dropout: zeroes each element with probability p and scales the
// survivors by 1/(1-p). Identity (same handle) in eval mode or when p == 0.
Tensor dropout(const Tensor& x, float p, bool train, Rng& rng);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

// Normalizes over the last dimension, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps);

// Gathers rows of a rank-2 table.
Tensor embedding(const Tensor& table, std::span<const int> ids);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Mean over non-pad rows of the cross entropy against
// (1 - epsilon) * one_hot(target) + epsilon / V. Rows whose target equals
// pad_id are ignored; an all-pad batch yields a zero loss.
Tensor cross_entropy_label_smoothed(const Tensor& logits, std::span<const int> targets,
                                    float epsilon, int pad_id);

struct AttentionShape {
  std::size_t batch = 1;
  std::size_t query_len = 1;
  std::size_t key_len = 1;
  std::size_t heads = 1;
  // Query i may attend key j only when j <= i + (key_len - query_len).
  bool causal = false;
};

// Scaled dot-product attention over already projected heads. q is
// [batch*query_len x d], k and v are [batch*key_len x d]; key_valid holds one
// flag per key (batch-major), 0 marking padding. Masked keys are skipped
// entirely, so rows never depend on values they may not attend to. When
// probs is non-null it receives [batch x heads x query_len x key_len].
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionShape& shape, std::span<const std::uint8_t> key_valid,
                            std::vector<float>* probs = nullptr);

// Throws NumericError naming `what` when any element is NaN or infinite.
void check_finite(const Tensor& x, const char* what);

}  // namespace nmt
