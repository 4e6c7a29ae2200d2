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
#include <string>
#include <vector>

#include "nmt/ops.hpp"
#include "nmt/random.hpp"
#include "nmt/tensor.hpp"

namespace nmt {

enum class NormStyle { pre, post };

const char* to_string(NormStyle style);
NormStyle parse_norm_style(const std::string& text);

inline constexpr float kLayerNormEps = 1e-5f;

// Uniform Xavier initialization of a [fan_in x fan_out] matrix.
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }
  void collect(const std::string& prefix, ParameterList& out) const;
  static std::size_t count(std::size_t in, std::size_t out) { return in * out + out; }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t d);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias, kLayerNormEps); }
  void collect(const std::string& prefix, ParameterList& out) const;
  static std::size_t count(std::size_t d) { return 2 * d; }
};

// Dropout switch and randomness for one forward pass.
struct ForwardMode {
  bool train = false;
  float dropout = 0.0f;
  Rng* rng = nullptr;

  Tensor apply_dropout(const Tensor& x) const;
};

struct Attention {
  Linear q, k, v, o;
  std::size_t heads = 1;

  Attention() = default;
  Attention(std::size_t d_model, std::size_t heads, Rng& rng);
  // queries: [batch*query_len x d], keys: [batch*key_len x d].
  Tensor operator()(const Tensor& queries, const Tensor& keys, const AttentionShape& shape,
                    std::span<const std::uint8_t> key_valid,
                    std::vector<float>* probs = nullptr) const;
  // Same with keys and values already projected by `k` and `v`.
  Tensor attend(const Tensor& queries, const Tensor& keys, const Tensor& values,
                const AttentionShape& shape, std::span<const std::uint8_t> key_valid) const;
  void collect(const std::string& prefix, ParameterList& out) const;
  static std::size_t count(std::size_t d) { return 4 * Linear::count(d, d); }
};

struct FeedForward {
  Linear in, out;

  FeedForward() = default;
  FeedForward(std::size_t d_model, std::size_t d_ff, Rng& rng);
  Tensor operator()(const Tensor& x) const { return out(relu(in(x))); }
  void collect(const std::string& prefix, ParameterList& out_params) const;
  static std::size_t count(std::size_t d, std::size_t d_ff) {
    return Linear::count(d, d_ff) + Linear::count(d_ff, d);
  }
};

// Activations are [batch*len x d] with batch-major rows.
struct EncoderLayer {
  Attention self_attention;
  FeedForward feed_forward;
  LayerNorm norm1, norm2;

  EncoderLayer() = default;
  EncoderLayer(std::size_t d_model, std::size_t heads, std::size_t d_ff, Rng& rng);
  Tensor operator()(const Tensor& x, std::size_t batch, std::size_t len,
                    std::span<const std::uint8_t> valid, NormStyle style,
                    const ForwardMode& mode) const;
  void collect(const std::string& prefix, ParameterList& out) const;
  static std::size_t count(std::size_t d, std::size_t d_ff) {
    return Attention::count(d) + FeedForward::count(d, d_ff) + 2 * LayerNorm::count(d);
  }
};

struct DecoderLayer {
  Attention self_attention;
  Attention cross_attention;
  FeedForward feed_forward;
  LayerNorm norm1, norm2, norm3;

  DecoderLayer() = default;
  DecoderLayer(std::size_t d_model, std::size_t heads, std::size_t d_ff, Rng& rng);
  Tensor operator()(const Tensor& x, std::size_t batch, std::size_t len,
                    std::span<const std::uint8_t> valid, const Tensor& memory,
                    std::size_t memory_len, std::span<const std::uint8_t> memory_valid,
                    NormStyle style, const ForwardMode& mode) const;
  // Inference for one new position per hypothesis, x: [hyps x d].
  // `self_keys`/`self_values` hold the projected keys and values of the `len`
  // earlier positions ([hyps*len x d]) and are extended in place;
  // `memory_keys`/`memory_values` are projected memory rows, one block per
  // hypothesis.
  Tensor step(const Tensor& x, std::size_t hyps, std::size_t len, Tensor& self_keys,
              Tensor& self_values, const Tensor& memory_keys, const Tensor& memory_values,
              std::size_t memory_len, std::span<const std::uint8_t> memory_valid,
              NormStyle style) const;
  void collect(const std::string& prefix, ParameterList& out) const;
  static std::size_t count(std::size_t d, std::size_t d_ff) {
    return 2 * Attention::count(d) + FeedForward::count(d, d_ff) + 3 * LayerNorm::count(d);
  }
};

// Runs a stack of encoder layers, followed by `final_norm` in pre-norm mode.
Tensor run_encoder(std::span<const EncoderLayer> layers, const LayerNorm& final_norm,
                   const Tensor& x, std::size_t batch, std::size_t len,
                   std::span<const std::uint8_t> valid, NormStyle style, const ForwardMode& mode);

// Copies `source` into `target` by name, checking that both sides have the same
// names and shapes.
void assign_parameters(const ParameterList& target, const ParameterList& source,
                       const std::string& what);

}  // namespace nmt
